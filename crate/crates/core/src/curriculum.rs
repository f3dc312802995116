//! Three-stage progressive curriculum: draft SFT, then GRPO at a short
//! generation cap on medium problems, then GRPO at a doubled cap on the
//! hardest band. Stages chain through checkpoint files, the run is resumable
//! from any completed stage, and every (stage, mode) pair gets an evaluation
//! report on the held-out split.
//!
//! Stage boundaries always pass through the on-disk f32 checkpoint, so a
//! resumed run and an uninterrupted run see bit-identical parameters.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{PromptMode, Vocabulary};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, TraceRecord};
use crate::grpo::{grpo_step, GrpoConfig};
use crate::optim::Optimizer;
use crate::policy::{load_checkpoint, save_checkpoint, Dims, PolicyParams};
use crate::report::render_report_text;
use crate::rng::{rng_from, substream, substream_n};
use crate::sft::{build_sft_dataset, save_sft_dataset, sft_train, SftBuildConfig, SftTrainConfig};
use crate::taskgen::{check_disjoint, load_split, DatasetSplit, Problem, SplitName};

pub const MODE_ORDER: [PromptMode; 3] = [PromptMode::Step, PromptMode::Draft, PromptMode::Adaptive];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    Sft,
    Rl1,
    Rl2,
}

impl StageId {
    pub fn as_str(self) -> &'static str {
        match self {
            StageId::Sft => "sft",
            StageId::Rl1 => "rl1",
            StageId::Rl2 => "rl2",
        }
    }
}

impl std::str::FromStr for StageId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(StageId::Sft),
            "rl1" => Ok(StageId::Rl1),
            "rl2" => Ok(StageId::Rl2),
            other => Err(Error::config(format!("unknown stage {other:?}"))),
        }
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub enum TrainerConfig {
    Sft { build: SftBuildConfig, train: SftTrainConfig },
    Grpo { grpo: GrpoConfig, steps: usize, batch_problems: usize, rollout_mode: PromptMode },
}

#[derive(Debug, Clone)]
pub struct StageConfig {
    pub stage_id: StageId,
    pub dataset: SplitName,
    pub difficulty_range: (u8, u8),
    pub l_max: usize,
    pub trainer: TrainerConfig,
    pub checkpoint_in: PathBuf,
    pub checkpoint_out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct CurriculumPlan {
    pub variant: String,
    pub seed: u64,
    pub dims: Dims,
    pub data_dir: PathBuf,
    pub ckpt_dir: PathBuf,
    pub report_dir: PathBuf,
    pub init_checkpoint: PathBuf,
    pub eval_max_new_tokens: usize,
    pub eval_samples: usize,
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub allow_nonmonotonic: bool,
    /// Create the entry checkpoint from a fresh initialization when it is
    /// missing. Single-RL-stage plans switch this off so a missing input
    /// checkpoint is an error naming the stage that produces it.
    pub auto_init: bool,
    pub stages: Vec<StageConfig>,
}

impl CurriculumPlan {
    pub fn report_root(&self) -> PathBuf {
        self.report_dir.join(&self.variant)
    }

    fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            max_new_tokens: self.eval_max_new_tokens,
            samples: self.eval_samples,
            temperature: self.eval_temperature,
            top_p: self.eval_top_p,
            seed,
        }
    }

    pub fn stage(&self, id: StageId) -> Option<&StageConfig> {
        self.stages.iter().find(|s| s.stage_id == id)
    }
}

fn stage_ckpt(ckpt_dir: &Path, variant: &str, stage: StageId) -> PathBuf {
    ckpt_dir.join(format!("{variant}-{stage}.ckpt"))
}

/// Build the full three-stage plan from a run config.
pub fn plan_from_config(config: &RunConfig) -> CurriculumPlan {
    let ckpt_dir = config.ckpt_dir();
    let variant = "full".to_string();
    let init_checkpoint = ckpt_dir.join("init.ckpt");
    let sft_out = stage_ckpt(&ckpt_dir, &variant, StageId::Sft);
    let rl1_out = stage_ckpt(&ckpt_dir, &variant, StageId::Rl1);
    let rl2_out = stage_ckpt(&ckpt_dir, &variant, StageId::Rl2);
    let stages = vec![
        StageConfig {
            stage_id: StageId::Sft,
            dataset: SplitName::SftPool,
            difficulty_range: (config.taskgen.sft_pool.levels[0], config.taskgen.sft_pool.levels[1]),
            l_max: config.model.context_len,
            trainer: TrainerConfig::Sft {
                build: config.sft_build_config(),
                train: config.sft_train_config(),
            },
            checkpoint_in: init_checkpoint.clone(),
            checkpoint_out: sft_out.clone(),
        },
        StageConfig {
            stage_id: StageId::Rl1,
            dataset: SplitName::RlStage1,
            difficulty_range: (
                config.taskgen.rl_stage1.levels[0],
                config.taskgen.rl_stage1.levels[1],
            ),
            l_max: config.rl1.l_max,
            trainer: TrainerConfig::Grpo {
                grpo: config.grpo_config(&config.rl1),
                steps: config.rl1.steps,
                batch_problems: config.rl1.batch_problems,
                rollout_mode: config.rl1.rollout_mode,
            },
            checkpoint_in: sft_out,
            checkpoint_out: rl1_out.clone(),
        },
        StageConfig {
            stage_id: StageId::Rl2,
            dataset: SplitName::RlStage2,
            difficulty_range: (
                config.taskgen.rl_stage2.levels[0],
                config.taskgen.rl_stage2.levels[1],
            ),
            l_max: config.rl2.l_max,
            trainer: TrainerConfig::Grpo {
                grpo: config.grpo_config(&config.rl2),
                steps: config.rl2.steps,
                batch_problems: config.rl2.batch_problems,
                rollout_mode: config.rl2.rollout_mode,
            },
            checkpoint_in: rl1_out,
            checkpoint_out: rl2_out,
        },
    ];
    CurriculumPlan {
        variant,
        seed: config.seed,
        dims: config.dims(),
        data_dir: config.data_dir(),
        ckpt_dir,
        report_dir: config.report_dir(),
        init_checkpoint,
        eval_max_new_tokens: config.eval.max_new_tokens,
        eval_samples: config.eval.samples,
        eval_temperature: config.eval.temperature,
        eval_top_p: config.eval.top_p,
        allow_nonmonotonic: config.allow_nonmonotonic,
        auto_init: true,
        stages,
    }
}

/// Reject malformed plans before any training starts.
pub fn validate_plan(plan: &CurriculumPlan) -> Result<()> {
    if plan.stages.is_empty() {
        return Err(Error::config("plan has no stages"));
    }
    for pair in plan.stages.windows(2) {
        if pair[1].stage_id <= pair[0].stage_id {
            return Err(Error::config(format!(
                "stages out of order: {} then {}",
                pair[0].stage_id, pair[1].stage_id
            )));
        }
        if pair[1].checkpoint_in != pair[0].checkpoint_out {
            return Err(Error::config(format!(
                "stage {} must consume the checkpoint of stage {}",
                pair[1].stage_id, pair[0].stage_id
            )));
        }
    }
    if plan.stages[0].checkpoint_in != plan.init_checkpoint {
        return Err(Error::config("first stage must start from the init checkpoint"));
    }
    let rl: Vec<&StageConfig> = plan
        .stages
        .iter()
        .filter(|s| matches!(s.trainer, TrainerConfig::Grpo { .. }))
        .collect();
    for pair in rl.windows(2) {
        if pair[1].l_max <= pair[0].l_max && !plan.allow_nonmonotonic {
            return Err(Error::config(format!(
                "l_max must expand across RL stages ({} then {}); \
                 reversed-length variants need the explicit override",
                pair[0].l_max, pair[1].l_max
            )));
        }
        if pair[1].difficulty_range.0 < pair[0].difficulty_range.0 {
            return Err(Error::config(
                "RL difficulty must not de-escalate across stages",
            ));
        }
    }
    Ok(())
}

/// Which stages to drop or alter for an ablation variant.
#[derive(Debug, Clone, Default)]
pub struct AblationSpec {
    pub skip: BTreeSet<StageId>,
    /// Swap the RL generation caps (long first), with the monotonicity
    /// override switched on.
    pub reverse_lengths: bool,
    /// Run RL rollouts under the step prompt instead of draft.
    pub step_rollout: bool,
}

impl AblationSpec {
    pub fn variant_tag(&self) -> String {
        let mut parts = Vec::new();
        for s in &self.skip {
            parts.push(format!("skip-{s}"));
        }
        if self.reverse_lengths {
            parts.push("revlen".to_string());
        }
        if self.step_rollout {
            parts.push("steprollout".to_string());
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Derive a runnable ablation variant from a plan.
pub fn ablate(plan: &CurriculumPlan, spec: &AblationSpec) -> Result<CurriculumPlan> {
    let mut out = plan.clone();
    out.variant = spec.variant_tag();
    out.stages.retain(|s| !spec.skip.contains(&s.stage_id));
    if out.stages.is_empty() {
        return Err(Error::config("ablation removed every stage"));
    }
    if spec.reverse_lengths {
        let mut caps: Vec<usize> = out
            .stages
            .iter()
            .filter(|s| matches!(s.trainer, TrainerConfig::Grpo { .. }))
            .map(|s| s.l_max)
            .collect();
        caps.reverse();
        let mut it = caps.into_iter();
        for stage in out.stages.iter_mut() {
            if let TrainerConfig::Grpo { ref mut grpo, .. } = stage.trainer {
                let cap = it.next().expect("cap per RL stage");
                stage.l_max = cap;
                grpo.max_new_tokens = cap;
            }
        }
        out.allow_nonmonotonic = true;
    }
    if spec.step_rollout {
        for stage in out.stages.iter_mut() {
            if let TrainerConfig::Grpo { ref mut rollout_mode, .. } = stage.trainer {
                *rollout_mode = PromptMode::Step;
            }
        }
    }
    // re-chain checkpoints under the variant name
    let mut prev = out.init_checkpoint.clone();
    for stage in out.stages.iter_mut() {
        stage.checkpoint_in = prev.clone();
        stage.checkpoint_out = stage_ckpt(&out.ckpt_dir, &out.variant, stage.stage_id);
        prev = stage.checkpoint_out.clone();
    }
    validate_plan(&out)?;
    Ok(out)
}

/// The four pipeline variants of the ablation table: full, skip-SFT,
/// reversed lengths, and step-prompt RL.
pub fn ablation_suite(plan: &CurriculumPlan) -> Result<Vec<CurriculumPlan>> {
    let skip_sft: BTreeSet<StageId> = [StageId::Sft].into();
    let specs = [
        AblationSpec::default(),
        AblationSpec { skip: skip_sft.clone(), ..Default::default() },
        AblationSpec { skip: skip_sft.clone(), reverse_lengths: true, ..Default::default() },
        AblationSpec { skip: skip_sft, reverse_lengths: true, step_rollout: true },
    ];
    specs.iter().map(|s| ablate(plan, s)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageModeReport {
    pub stage: StageId,
    pub mode: PromptMode,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub stages_run: Vec<StageId>,
    pub final_checkpoint: String,
    pub reports: Vec<StageModeReport>,
}

fn append_jsonl<T: Serialize>(file: &mut std::io::BufWriter<std::fs::File>, row: &T) -> Result<()> {
    serde_json::to_writer(&mut *file, row)?;
    file.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TrainLogRow<'a> {
    step: usize,
    stage: &'a str,
    mean_reward: f64,
    mean_len: f64,
    clip_frac: f64,
    objective: f64,
}

#[derive(Serialize, Deserialize)]
pub struct RolloutRow {
    pub stage: String,
    pub step: usize,
    pub problem_id: String,
    /// Generated tokens including any terminating EOS — the quantity the
    /// stage cap bounds.
    pub generated_tokens: usize,
    pub stop: crate::policy::StopReason,
    pub reward: f64,
}

struct Splits {
    by_name: std::collections::BTreeMap<SplitName, DatasetSplit>,
}

impl Splits {
    fn load(data_dir: &Path, names: &BTreeSet<SplitName>) -> Result<Splits> {
        let mut by_name = std::collections::BTreeMap::new();
        for &name in names {
            let path = data_dir.join(format!("{name}.jsonl"));
            by_name.insert(name, load_split(name, &path)?);
        }
        let loaded: Vec<&DatasetSplit> = by_name.values().collect();
        check_disjoint(&loaded)?;
        Ok(Splits { by_name })
    }

    fn get(&self, name: SplitName) -> &DatasetSplit {
        &self.by_name[&name]
    }
}

/// Execute a plan, optionally resuming at a later stage. Completed earlier
/// stages must have their checkpoints on disk.
pub fn run_plan(plan: &CurriculumPlan, resume_from: Option<StageId>) -> Result<RunSummary> {
    validate_plan(plan)?;
    if let Some(from) = resume_from {
        if plan.stage(from).is_none() {
            return Err(Error::config(format!("cannot resume: plan has no stage {from}")));
        }
    }
    let vocab = Vocabulary::standard();
    let mut needed: BTreeSet<SplitName> = plan.stages.iter().map(|s| s.dataset).collect();
    needed.insert(SplitName::Eval);
    // Disjointness is checked across every split the run touches.
    for name in SplitName::ALL {
        if plan.data_dir.join(format!("{name}.jsonl")).exists() {
            needed.insert(name);
        }
    }
    let splits = Splits::load(&plan.data_dir, &needed)?;

    std::fs::create_dir_all(&plan.ckpt_dir)?;
    let report_root = plan.report_root();
    std::fs::create_dir_all(&report_root)?;

    if !plan.init_checkpoint.exists() {
        if !plan.auto_init {
            return Err(Error::MissingArtifact {
                path: plan.init_checkpoint.clone(),
                producer: "the preceding stage (sft / rl --stage rl1)".to_string(),
            });
        }
        let params = PolicyParams::init(plan.dims, substream(plan.seed, "init"));
        save_checkpoint(&params, vocab, &plan.init_checkpoint)?;
        eprintln!("[{}] wrote init checkpoint {:?}", plan.variant, plan.init_checkpoint);
    }

    let mut stages_run = Vec::new();
    let mut reports = Vec::new();
    let mut reached_resume_point = resume_from.is_none();
    for stage in &plan.stages {
        if let Some(from) = resume_from {
            if stage.stage_id == from {
                reached_resume_point = true;
            }
        }
        if !reached_resume_point {
            if !stage.checkpoint_out.exists() {
                return Err(Error::config(format!(
                    "cannot resume past stage {}: checkpoint {:?} is missing",
                    stage.stage_id, stage.checkpoint_out
                )));
            }
            // pick up the existing reports for the summary when present
            for mode in MODE_ORDER {
                let path = report_json_path(&report_root, stage.stage_id, mode);
                if let Ok(text) = std::fs::read_to_string(&path) {
                    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
                        reports.push(StageModeReport { stage: stage.stage_id, mode, report });
                    }
                }
            }
            eprintln!("[{}] stage {} already complete, skipping", plan.variant, stage.stage_id);
            continue;
        }

        eprintln!("[{}] running stage {}", plan.variant, stage.stage_id);
        let mut params = load_checkpoint(&stage.checkpoint_in, Some(vocab))?;
        if params.dims != plan.dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint dims {:?} do not match plan dims {:?}",
                params.dims, plan.dims
            )));
        }
        run_stage(plan, stage, &mut params, &splits, &report_root)?;
        save_checkpoint(&params, vocab, &stage.checkpoint_out)?;
        stages_run.push(stage.stage_id);

        // evaluate what was just written so resumed runs see identical bits
        let eval_params = load_checkpoint(&stage.checkpoint_out, Some(vocab))?;
        for mode in MODE_ORDER {
            let seed = substream(plan.seed, &format!("eval-{}-{}", stage.stage_id, mode));
            let (report, traces) = evaluate(
                &eval_params,
                vocab,
                splits.get(SplitName::Eval),
                mode,
                &plan.eval_config(seed),
            )?;
            write_stage_report(&report_root, stage.stage_id, mode, &report, &traces)?;
            eprintln!(
                "[{}] {} / {}: acc {:.2} tokens {:.1}",
                plan.variant, stage.stage_id, mode, report.acc, report.mean_tokens
            );
            reports.push(StageModeReport { stage: stage.stage_id, mode, report });
        }
    }

    let final_checkpoint = plan
        .stages
        .last()
        .map(|s| s.checkpoint_out.clone())
        .expect("plan has stages");
    let summary = RunSummary {
        variant: plan.variant.clone(),
        seed: plan.seed,
        stages_run,
        final_checkpoint: final_checkpoint
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        reports,
    };
    let summary_path = report_root.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn report_json_path(report_root: &Path, stage: StageId, mode: PromptMode) -> PathBuf {
    report_root.join(format!("{stage}-{mode}.report.json"))
}

pub fn traces_path(report_root: &Path, stage: StageId, mode: PromptMode) -> PathBuf {
    report_root.join(format!("{stage}-{mode}.traces.jsonl"))
}

pub fn rollouts_path(report_root: &Path, stage: StageId) -> PathBuf {
    report_root.join(format!("rollouts-{stage}.jsonl"))
}

fn write_stage_report(
    report_root: &Path,
    stage: StageId,
    mode: PromptMode,
    report: &EvalReport,
    traces: &[TraceRecord],
) -> Result<()> {
    std::fs::write(
        report_json_path(report_root, stage, mode),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(
        report_root.join(format!("{stage}-{mode}.report.txt")),
        render_report_text(&format!("{stage} / {mode}"), report),
    )?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(traces_path(
        report_root,
        stage,
        mode,
    ))?);
    for t in traces {
        append_jsonl(&mut out, t)?;
    }
    out.flush()?;
    Ok(())
}

fn run_stage(
    plan: &CurriculumPlan,
    stage: &StageConfig,
    params: &mut PolicyParams,
    splits: &Splits,
    report_root: &Path,
) -> Result<()> {
    let vocab = Vocabulary::standard();
    let split = splits.get(stage.dataset);
    match &stage.trainer {
        TrainerConfig::Sft { build, train } => {
            let dataset = build_sft_dataset(split, build, substream(plan.seed, "sft-build"))?;
            eprintln!(
                "[{}] sft dataset: {} examples (draft kept {}/{} from the pool)",
                plan.variant,
                dataset.examples.len(),
                dataset.provenance.kept,
                dataset.provenance.generated
            );
            save_sft_dataset(
                &dataset,
                vocab,
                &report_root.join("sft_dataset.jsonl"),
                &report_root.join("sft_filtered.jsonl"),
            )?;
            let curve =
                sft_train(params, vocab, &dataset, train, substream(plan.seed, "sft-train"))?;
            std::fs::write(
                report_root.join("sft_loss.json"),
                serde_json::to_string_pretty(&curve)?,
            )?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                eprintln!("[{}] sft loss {:.4} -> {:.4}", plan.variant, first, last);
            }
        }
        TrainerConfig::Grpo { grpo, steps, batch_problems, rollout_mode } => {
            if *batch_problems > split.problems.len() {
                return Err(Error::config(format!(
                    "stage {}: batch_problems {} exceeds split size {}",
                    stage.stage_id,
                    batch_problems,
                    split.problems.len()
                )));
            }
            let stage_seed = substream(plan.seed, stage.stage_id.as_str());
            let mut order: Vec<usize> = (0..split.problems.len()).collect();
            let mut rng = rng_from(substream(stage_seed, "order"));
            for i in (1..order.len()).rev() {
                let j = rand::Rng::gen_range(&mut rng, 0..=i);
                order.swap(i, j);
            }
            let mut log = std::io::BufWriter::new(std::fs::File::create(
                report_root.join(format!("train_log-{}.jsonl", stage.stage_id)),
            )?);
            let mut rollout_log = std::io::BufWriter::new(std::fs::File::create(rollouts_path(
                report_root,
                stage.stage_id,
            ))?);
            let mut optimizer =
                Optimizer::new(grpo.optimizer, grpo.learning_rate, params.flat.len());
            let mut cursor = 0usize;
            for step in 0..*steps {
                let batch: Vec<&Problem> = (0..*batch_problems)
                    .map(|_| {
                        let p = &split.problems[order[cursor]];
                        cursor = (cursor + 1) % order.len();
                        p
                    })
                    .collect();
                let (metrics, groups) = grpo_step(
                    params,
                    vocab,
                    &batch,
                    grpo,
                    *rollout_mode,
                    substream_n(stage_seed, "step", step as u64),
                    &mut optimizer,
                )?;
                append_jsonl(
                    &mut log,
                    &TrainLogRow {
                        step,
                        stage: stage.stage_id.as_str(),
                        mean_reward: metrics.mean_reward,
                        mean_len: metrics.mean_len,
                        clip_frac: metrics.clip_frac,
                        objective: metrics.objective,
                    },
                )?;
                for group in &groups {
                    for (trace, reward) in group.traces.iter().zip(&group.rewards) {
                        append_jsonl(
                            &mut rollout_log,
                            &RolloutRow {
                                stage: stage.stage_id.as_str().to_string(),
                                step,
                                problem_id: group.problem_id.clone(),
                                generated_tokens: trace.tokens.len(),
                                stop: trace.stop,
                                reward: *reward,
                            },
                        )?;
                    }
                }
                if step % 10 == 0 || step + 1 == *steps {
                    eprintln!(
                        "[{}] {} step {}/{}: reward {:.3} len {:.1}",
                        plan.variant,
                        stage.stage_id,
                        step + 1,
                        steps,
                        metrics.mean_reward,
                        metrics.mean_len
                    );
                }
            }
            log.flush()?;
            rollout_log.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_config() -> RunConfig {
        RunConfig::from_toml_str(
            r#"
seed = 11

[model]
embed_dim = 8
context_len = 96

[taskgen]
max_intermediate = 12

[taskgen.sft_pool]
count = 8
levels = [1, 2]

[taskgen.rl_stage1]
count = 6
levels = [1, 2]

[taskgen.rl_stage2]
count = 6
levels = [2, 3]

[taskgen.eval]
count = 6
levels = [1, 3]

[sft]
error_rate = 0.0
adaptive_fraction = 0.5
epochs = 1
learning_rate = 0.2
batch_size = 4

[rl1]
l_max = 32
steps = 1
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.02
mini_batch_size = 2
epochs = 1

[rl2]
l_max = 64
steps = 1
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.02
mini_batch_size = 2
epochs = 1

[eval]
max_new_tokens = 48
"#,
        )
        .unwrap()
    }

    #[test]
    fn full_plan_validates() {
        let plan = plan_from_config(&tiny_config());
        validate_plan(&plan).unwrap();
        assert_eq!(plan.stages.len(), 3);
    }

    #[test]
    fn equal_lmax_is_rejected() {
        let mut plan = plan_from_config(&tiny_config());
        for s in plan.stages.iter_mut() {
            if let TrainerConfig::Grpo { ref mut grpo, .. } = s.trainer {
                s.l_max = 64;
                grpo.max_new_tokens = 64;
            }
        }
        assert!(validate_plan(&plan).is_err());
        plan.allow_nonmonotonic = true;
        validate_plan(&plan).unwrap();
    }

    #[test]
    fn ablation_variants_mirror_the_table() {
        let plan = plan_from_config(&tiny_config());
        let variants = ablation_suite(&plan).unwrap();
        assert_eq!(variants.len(), 4);
        assert_eq!(variants[0].variant, "full");
        assert_eq!(variants[0].stages.len(), 3);
        assert_eq!(variants[1].variant, "skip-sft");
        assert_eq!(variants[1].stages.len(), 2);
        assert_eq!(variants[1].stages[0].checkpoint_in, plan.init_checkpoint);
        // reversed lengths: long cap first
        let rev = &variants[2];
        assert!(rev.allow_nonmonotonic);
        assert_eq!(rev.stages[0].l_max, 64);
        assert_eq!(rev.stages[1].l_max, 32);
        // step-prompt RL
        let step = &variants[3];
        for s in &step.stages {
            if let TrainerConfig::Grpo { rollout_mode, .. } = &s.trainer {
                assert_eq!(*rollout_mode, PromptMode::Step);
            }
        }
    }

    #[test]
    fn skipping_everything_is_rejected() {
        let plan = plan_from_config(&tiny_config());
        let spec = AblationSpec {
            skip: [StageId::Sft, StageId::Rl1, StageId::Rl2].into(),
            ..Default::default()
        };
        assert!(ablate(&plan, &spec).is_err());
    }

    #[test]
    fn sft_only_variant_runs_sft_alone() {
        let plan = plan_from_config(&tiny_config());
        let spec = AblationSpec { skip: [StageId::Rl1, StageId::Rl2].into(), ..Default::default() };
        let variant = ablate(&plan, &spec).unwrap();
        assert_eq!(variant.stages.len(), 1);
        assert_eq!(variant.stages[0].stage_id, StageId::Sft);
    }

    #[test]
    fn missing_data_names_the_gen_command() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.out_dir = dir.path().to_path_buf();
        let plan = plan_from_config(&config);
        let err = run_plan(&plan, None).unwrap_err();
        match err {
            Error::MissingArtifact { producer, .. } => assert_eq!(producer, "gen"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
