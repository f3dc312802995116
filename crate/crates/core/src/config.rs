//! Run configuration: one human-editable TOML file with nested sections.
//!
//! The schema is strict — unknown keys are rejected so a typo cannot silently
//! fall back to a default. All randomness in a run flows from `seed` through
//! named substreams; artifacts land under one run directory named by the
//! config hash, so re-running an identical config hits the same directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::PromptMode;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::grpo::GrpoConfig;
use crate::optim::OptimizerKind;
use crate::sft::{SftBuildConfig, SftTrainConfig};
use crate::taskgen::{MAX_LEVEL, MIN_LEVEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// 0 means all available cores.
    #[serde(default)]
    pub workers: usize,
    /// Permits the reversed-length ablation (rl2 cap below rl1).
    #[serde(default)]
    pub allow_nonmonotonic: bool,
    #[serde(default)]
    pub paths: PathOverrides,
    pub model: ModelSection,
    pub taskgen: TaskgenSection,
    pub sft: SftSection,
    pub rl1: RlSection,
    pub rl2: RlSection,
    pub eval: EvalSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathOverrides {
    pub data_dir: Option<PathBuf>,
    pub ckpt_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub context_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub count: usize,
    /// Inclusive difficulty bounds [lo, hi].
    pub levels: [u8; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskgenSection {
    pub max_intermediate: i64,
    pub sft_pool: SplitSpec,
    pub rl_stage1: SplitSpec,
    pub rl_stage2: SplitSpec,
    pub eval: SplitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftSection {
    pub error_rate: f64,
    #[serde(default = "default_step_fraction")]
    pub step_fraction: f64,
    pub adaptive_fraction: f64,
    #[serde(default = "default_adaptive_level")]
    pub adaptive_draft_max_level: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

fn default_step_fraction() -> f64 {
    1.0
}

fn default_adaptive_level() -> u8 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    pub l_max: usize,
    pub steps: usize,
    /// Problems per GRPO step.
    pub batch_problems: usize,
    pub group_size: usize,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub mini_batch_size: usize,
    /// Inner optimizer epochs per rollout batch.
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_rollout_mode")]
    pub rollout_mode: PromptMode,
}

fn default_rollout_mode() -> PromptMode {
    PromptMode::Draft
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub max_new_tokens: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
}

fn default_samples() -> usize {
    1
}

fn default_temperature() -> f64 {
    0.6
}

fn default_top_p() -> f64 {
    0.95
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "write a config file (see configs/default.toml)".to_string(),
        })?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("cannot parse {path:?}: {e}")))?;
        config.apply_env_overrides()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("cannot parse config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// CI-style overrides: DRAFTRL_SEED, DRAFTRL_OUT_DIR, DRAFTRL_WORKERS.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("DRAFTRL_SEED") {
            self.seed = seed
                .parse()
                .map_err(|_| Error::config(format!("DRAFTRL_SEED {seed:?} is not a u64")))?;
        }
        if let Ok(dir) = std::env::var("DRAFTRL_OUT_DIR") {
            self.out_dir = PathBuf::from(dir);
        }
        if let Ok(workers) = std::env::var("DRAFTRL_WORKERS") {
            self.workers = workers
                .parse()
                .map_err(|_| Error::config(format!("DRAFTRL_WORKERS {workers:?} is not a usize")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.embed_dim == 0 || self.model.context_len == 0 {
            return Err(Error::config("model dims must be positive"));
        }
        if self.model.embed_dim % crate::policy::N_HEADS != 0 {
            return Err(Error::config(format!(
                "embed_dim must be a multiple of {} (attention heads)",
                crate::policy::N_HEADS
            )));
        }
        for (name, spec) in [
            ("sft_pool", &self.taskgen.sft_pool),
            ("rl_stage1", &self.taskgen.rl_stage1),
            ("rl_stage2", &self.taskgen.rl_stage2),
            ("eval", &self.taskgen.eval),
        ] {
            let [lo, hi] = spec.levels;
            if spec.count == 0 {
                return Err(Error::config(format!("taskgen.{name}.count must be >= 1")));
            }
            if lo < MIN_LEVEL || hi > MAX_LEVEL || lo > hi {
                return Err(Error::config(format!("taskgen.{name}.levels [{lo},{hi}] invalid")));
            }
        }
        if self.taskgen.rl_stage2.levels[0] < self.taskgen.rl_stage1.levels[0] {
            return Err(Error::config(
                "rl_stage2 difficulty must not start below rl_stage1 (difficulty escalates)",
            ));
        }
        if !(0.0..1.0).contains(&self.sft.error_rate) {
            return Err(Error::config("sft.error_rate must be in [0, 1)"));
        }
        if self.rl2.l_max <= self.rl1.l_max && !self.allow_nonmonotonic {
            return Err(Error::config(
                "rl2.l_max must exceed rl1.l_max (incremental length expansion); \
                 set allow_nonmonotonic for reversed-length ablations",
            ));
        }
        for (name, rl) in [("rl1", &self.rl1), ("rl2", &self.rl2)] {
            self.grpo_config(rl).validate().map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("{name}: {msg}")),
                other => other,
            })?;
            if rl.steps == 0 || rl.batch_problems == 0 {
                return Err(Error::config(format!("{name}: steps and batch_problems >= 1")));
            }
        }
        if self.eval.samples == 0 {
            return Err(Error::config("eval.samples must be >= 1"));
        }
        Ok(())
    }

    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// First 12 hex chars of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("run-{}", self.hash()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.data_dir.clone().unwrap_or_else(|| self.run_dir().join("data"))
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.paths.ckpt_dir.clone().unwrap_or_else(|| self.run_dir().join("ckpt"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.paths.report_dir.clone().unwrap_or_else(|| self.run_dir().join("reports"))
    }

    pub fn dims(&self) -> crate::policy::Dims {
        crate::policy::Dims {
            vocab: crate::codec::Vocabulary::standard().size(),
            embed: self.model.embed_dim,
            context: self.model.context_len,
        }
    }

    pub fn sft_build_config(&self) -> SftBuildConfig {
        SftBuildConfig {
            error_rate: self.sft.error_rate,
            step_fraction: self.sft.step_fraction,
            adaptive_fraction: self.sft.adaptive_fraction,
            adaptive_draft_max_level: self.sft.adaptive_draft_max_level,
        }
    }

    pub fn sft_train_config(&self) -> SftTrainConfig {
        SftTrainConfig {
            epochs: self.sft.epochs,
            learning_rate: self.sft.learning_rate,
            batch_size: self.sft.batch_size,
            optimizer: self.sft.optimizer,
        }
    }

    pub fn grpo_config(&self, rl: &RlSection) -> GrpoConfig {
        GrpoConfig {
            group_size: rl.group_size,
            clip_eps: rl.clip_eps,
            learning_rate: rl.learning_rate,
            mini_batch_size: rl.mini_batch_size,
            max_new_tokens: rl.l_max,
            epochs: rl.epochs,
            optimizer: rl.optimizer,
        }
    }

    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            max_new_tokens: self.eval.max_new_tokens,
            samples: self.eval.samples,
            temperature: self.eval.temperature,
            top_p: self.eval.top_p,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 7

[model]
embed_dim = 16
context_len = 128

[taskgen]
max_intermediate = 12

[taskgen.sft_pool]
count = 20
levels = [1, 3]

[taskgen.rl_stage1]
count = 10
levels = [1, 3]

[taskgen.rl_stage2]
count = 10
levels = [3, 5]

[taskgen.eval]
count = 10
levels = [1, 5]

[sft]
error_rate = 0.1
adaptive_fraction = 0.5
epochs = 2
learning_rate = 0.3
batch_size = 4

[rl1]
l_max = 64
steps = 2
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.05
mini_batch_size = 2
epochs = 1

[rl2]
l_max = 128
steps = 2
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.05
mini_batch_size = 2
epochs = 1

[eval]
max_new_tokens = 100
"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        let canon = config.canonical_toml();
        let reparsed = RunConfig::from_toml_str(&canon).unwrap();
        assert_eq!(config, reparsed);
        assert_eq!(config.hash(), reparsed.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\n[mystery]\nx = 1\n");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad2 = MINIMAL.replace("error_rate = 0.1", "error_rate = 0.1\ntypo_key = 2");
        assert!(RunConfig::from_toml_str(&bad2).is_err());
    }

    #[test]
    fn nonmonotonic_lmax_needs_the_override() {
        let swapped = MINIMAL.replace("l_max = 128", "l_max = 32");
        assert!(RunConfig::from_toml_str(&swapped).is_err());
        let allowed = format!("seed = 7\nallow_nonmonotonic = true\n{}",
            swapped.trim_start().trim_start_matches("seed = 7"));
        assert!(RunConfig::from_toml_str(&allowed).is_ok());
    }

    #[test]
    fn difficulty_escalation_is_enforced() {
        let bad = MINIMAL.replace(
            "[taskgen.rl_stage2]\ncount = 10\nlevels = [3, 5]",
            "[taskgen.rl_stage2]\ncount = 10\nlevels = [1, 5]",
        );
        // rl_stage1 starts at 1, so lowering rl_stage2 to 1 is still legal;
        // push rl_stage1 up instead to trigger the check.
        assert!(RunConfig::from_toml_str(&bad).is_ok());
        let bad2 = bad.replace(
            "[taskgen.rl_stage1]\ncount = 10\nlevels = [1, 3]",
            "[taskgen.rl_stage1]\ncount = 10\nlevels = [2, 3]",
        );
        assert!(RunConfig::from_toml_str(&bad2).is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let b = RunConfig::from_toml_str(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.run_dir(), b.run_dir());
    }
}
