//! `draftrl` — one entry point for the whole pipeline.
//!
//! ```text
//! draftrl --config configs/default.toml gen
//! draftrl --config configs/default.toml run
//! draftrl --config configs/default.toml eval --ckpt <file> --split eval --mode draft
//! draftrl --config configs/default.toml report
//! draftrl --config configs/default.toml ablate --skip sft --run
//! ```
//!
//! Every command exits nonzero on any error; a zero exit means the declared
//! artifacts were written and validated.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use draftrl_core::codec::PromptMode;
use draftrl_core::config::RunConfig;
use draftrl_core::curriculum::{
    ablate, plan_from_config, run_plan, AblationSpec, CurriculumPlan, StageId,
};
use draftrl_core::eval::evaluate;
use draftrl_core::policy::load_checkpoint;
use draftrl_core::report::{comparison_table, gather_rows, trend_csv};
use draftrl_core::rng::substream;
use draftrl_core::taskgen::{load_split, write_splits, SplitName};
use draftrl_core::Vocabulary;

#[derive(Parser)]
#[command(name = "draftrl", about = "draft-mode reasoning curriculum on a synthetic task")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite existing artifacts where a command would otherwise refuse.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four dataset splits as JSONL.
    Gen,
    /// Run the SFT stage only.
    Sft,
    /// Run one RL stage (requires the preceding checkpoint).
    Rl {
        #[arg(long)]
        stage: StageId,
    },
    /// Run the full curriculum plan.
    Run {
        /// Plan file; defaults to --config.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Resume a partially completed plan from a stage.
    Resume {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        from: StageId,
    },
    /// Evaluate a checkpoint on a split under one prompt mode.
    Eval(EvalArgs),
    /// Aggregate per-stage reports into a comparison table and trend CSV.
    Report {
        /// Plan variant whose reports to aggregate.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Derive (and optionally run) an ablation variant of the plan.
    Ablate {
        /// Stages to skip, comma separated (e.g. sft or sft,rl1).
        #[arg(long, value_delimiter = ',')]
        skip: Vec<StageId>,
        /// Swap the RL generation caps (long first).
        #[arg(long)]
        reverse_lengths: bool,
        /// Roll out under the step prompt instead of draft.
        #[arg(long)]
        step_rollout: bool,
        /// Execute the variant after deriving it.
        #[arg(long)]
        run: bool,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    split: SplitName,
    #[arg(long)]
    mode: PromptMode,
    /// Samples per problem; 1 means greedy decoding.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long = "top-p")]
    top_p: Option<f64>,
    #[arg(long)]
    max_new: Option<usize>,
    /// Output directory; defaults to <reports>/adhoc.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = RunConfig::load(&cli.config)
        .with_context(|| format!("loading config {:?}", cli.config))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .ok();
    }
    match cli.command {
        Command::Gen => cmd_gen(&config, cli.force),
        Command::Sft => cmd_stage(&config, StageId::Sft),
        Command::Rl { stage } => {
            if stage == StageId::Sft {
                bail!("`rl` runs rl1 or rl2; use `sft` for the distillation stage");
            }
            cmd_stage(&config, stage)
        }
        Command::Run { plan } => {
            let config = reload_if_plan(&config, plan.as_deref(), cli.seed, cli.workers)?;
            let plan = plan_from_config(&config);
            run_plan(&plan, None)?;
            println!("run complete: reports under {:?}", plan.report_root());
            Ok(())
        }
        Command::Resume { plan, from } => {
            let config = reload_if_plan(&config, plan.as_deref(), cli.seed, cli.workers)?;
            let plan = plan_from_config(&config);
            run_plan(&plan, Some(from))?;
            println!("resumed from {from}: reports under {:?}", plan.report_root());
            Ok(())
        }
        Command::Eval(args) => cmd_eval(&config, args),
        Command::Report { variant } => cmd_report(&config, &variant),
        Command::Ablate { skip, reverse_lengths, step_rollout, run } => {
            let spec = AblationSpec {
                skip: skip.into_iter().collect::<BTreeSet<_>>(),
                reverse_lengths,
                step_rollout,
            };
            let base = plan_from_config(&config);
            let variant = ablate(&base, &spec)?;
            println!("variant {}:", variant.variant);
            for stage in &variant.stages {
                println!(
                    "  {} on {} (l_max {})",
                    stage.stage_id,
                    stage.dataset.as_str(),
                    stage.l_max
                );
            }
            if run {
                run_plan(&variant, None)?;
                println!("ablation complete: reports under {:?}", variant.report_root());
            }
            Ok(())
        }
    }
}

fn reload_if_plan(
    config: &RunConfig,
    plan: Option<&std::path::Path>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> anyhow::Result<RunConfig> {
    match plan {
        None => Ok(config.clone()),
        Some(path) => {
            let mut alt =
                RunConfig::load(path).with_context(|| format!("loading plan {path:?}"))?;
            if let Some(seed) = seed {
                alt.seed = seed;
            }
            if let Some(workers) = workers {
                alt.workers = workers;
            }
            Ok(alt)
        }
    }
}

fn cmd_gen(config: &RunConfig, force: bool) -> anyhow::Result<()> {
    let written = write_splits(&config.taskgen, config.seed, &config.data_dir(), force)?;
    for (name, path) in &written {
        println!("wrote {:?} ({})", path, name.as_str());
    }
    Ok(())
}

fn cmd_stage(config: &RunConfig, stage: StageId) -> anyhow::Result<()> {
    let full = plan_from_config(config);
    let plan = single_stage(&full, stage)?;
    run_plan(&plan, None)?;
    println!("stage {stage} complete: reports under {:?}", plan.report_root());
    Ok(())
}

fn single_stage(plan: &CurriculumPlan, id: StageId) -> anyhow::Result<CurriculumPlan> {
    let mut out = plan.clone();
    out.stages.retain(|s| s.stage_id == id);
    if out.stages.is_empty() {
        bail!("plan has no stage {id}");
    }
    // The stage keeps its place in the checkpoint chain; only the sft stage
    // may start from a fresh init checkpoint.
    out.init_checkpoint = out.stages[0].checkpoint_in.clone();
    out.auto_init = id == StageId::Sft;
    Ok(out)
}

fn cmd_eval(config: &RunConfig, args: EvalArgs) -> anyhow::Result<()> {
    let vocab = Vocabulary::standard();
    let params = load_checkpoint(&args.ckpt, Some(vocab))?;
    let split_path = config.data_dir().join(format!("{}.jsonl", args.split));
    let split = load_split(args.split, &split_path)?;
    let mut eval_config = config.eval_config(substream(
        config.seed,
        &format!("eval-cli-{}-{}", args.split.as_str(), args.mode),
    ));
    if let Some(n) = args.samples {
        eval_config.samples = n;
    }
    if let Some(t) = args.temp {
        eval_config.temperature = t;
    }
    if let Some(p) = args.top_p {
        eval_config.top_p = p;
    }
    if let Some(m) = args.max_new {
        eval_config.max_new_tokens = m;
    }
    let (report, traces) = evaluate(&params, vocab, &split, args.mode, &eval_config)?;

    let out_dir = args.out.unwrap_or_else(|| config.report_dir().join("adhoc"));
    std::fs::create_dir_all(&out_dir)?;
    let stem = format!(
        "{}-{}-{}",
        args.ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        args.split.as_str(),
        args.mode
    );
    let title = stem.clone();
    std::fs::write(out_dir.join(format!("{stem}.report.json")), serde_json::to_string_pretty(&report)?)?;
    let text = draftrl_core::report::render_report_text(&title, &report);
    std::fs::write(out_dir.join(format!("{stem}.report.txt")), &text)?;
    let mut lines = String::new();
    for t in &traces {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    std::fs::write(out_dir.join(format!("{stem}.traces.jsonl")), lines)?;
    print!("{text}");
    Ok(())
}

fn cmd_report(config: &RunConfig, variant: &str) -> anyhow::Result<()> {
    let root = config.report_dir().join(variant);
    let rows = gather_rows(&root)?;
    let table = comparison_table(&rows);
    let csv = trend_csv(&rows);
    std::fs::write(root.join("comparison.txt"), &table)?;
    std::fs::write(root.join("trend.csv"), &csv)?;
    print!("{table}");
    println!("wrote {:?} and {:?}", root.join("comparison.txt"), root.join("trend.csv"));
    Ok(())
}
