//! End-to-end checks of the `draftrl` binary: exit codes, artifact layout,
//! idempotent generation, overwrite refusal, env overrides, and report
//! aggregation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_draftrl")
}

const TINY: &str = r#"

[model]
embed_dim = 8
context_len = 160

[taskgen]
max_intermediate = 12

[taskgen.sft_pool]
count = 12
levels = [1, 3]

[taskgen.rl_stage1]
count = 8
levels = [1, 2]

[taskgen.rl_stage2]
count = 8
levels = [2, 3]

[taskgen.eval]
count = 9
levels = [1, 3]

[sft]
error_rate = 0.1
adaptive_fraction = 0.5
epochs = 1
learning_rate = 0.002
batch_size = 4

[rl1]
l_max = 48
steps = 1
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.0001
mini_batch_size = 2
epochs = 1

[rl2]
l_max = 96
steps = 1
batch_problems = 2
group_size = 2
clip_eps = 0.2
learning_rate = 0.0001
mini_batch_size = 2
epochs = 1

[eval]
max_new_tokens = 64
"#;

struct Workdir {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn setup() -> Workdir {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    let out = tmp.path().join("runs");
    let text = format!("seed = 9\nout_dir = {:?}\n{TINY}", out.to_string_lossy());
    std::fs::write(&config, text).unwrap();
    Workdir { _tmp: tmp, config, out }
}

fn run(work: &Workdir, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--config")
        .arg(&work.config)
        .args(args)
        .env_remove("DRAFTRL_SEED")
        .env_remove("DRAFTRL_OUT_DIR")
        .env_remove("DRAFTRL_WORKERS")
        .output()
        .expect("binary runs")
}

fn run_dir(out: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    assert_eq!(entries.len(), 1, "expected one run dir, got {entries:?}");
    entries.pop().unwrap()
}

#[test]
fn gen_is_idempotent_and_refuses_overwrite() {
    let work = setup();
    let first = run(&work, &["gen"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let data = run_dir(&work.out).join("data");
    let before = std::fs::read(data.join("sft_pool.jsonl")).unwrap();

    // a second run without --force must refuse and leave files intact
    let second = run(&work, &["gen"]);
    assert!(!second.status.success());
    let msg = String::from_utf8_lossy(&second.stderr).to_lowercase();
    assert!(msg.contains("force"), "unhelpful refusal: {msg}");

    let third = run(&work, &["--force", "gen"]);
    assert!(third.status.success());
    let after = std::fs::read(data.join("sft_pool.jsonl")).unwrap();
    assert_eq!(before, after, "same seed must regenerate identical bytes");
}

#[test]
fn split_sizes_match_config() {
    let work = setup();
    assert!(run(&work, &["gen"]).status.success());
    let data = run_dir(&work.out).join("data");
    for (name, expect) in
        [("sft_pool", 12), ("rl_stage1", 8), ("rl_stage2", 8), ("eval", 9)]
    {
        let text = std::fs::read_to_string(data.join(format!("{name}.jsonl"))).unwrap();
        assert_eq!(text.lines().count(), expect, "{name}");
    }
}

#[test]
fn unknown_config_keys_fail_loudly() {
    let work = setup();
    let mut text = std::fs::read_to_string(&work.config).unwrap();
    text.push_str("\n[sft]\nnot_a_real_knob = 1\n");
    let bad = work.config.with_file_name("bad.toml");
    std::fs::write(&bad, text).unwrap();
    let out = Command::new(bin()).arg("--config").arg(&bad).arg("gen").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_without_gen_names_the_producer() {
    let work = setup();
    let out = run(&work, &["run"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("gen"), "error should name the gen command: {msg}");
}

#[test]
fn env_seed_override_changes_the_run_directory() {
    let work = setup();
    assert!(run(&work, &["gen"]).status.success());
    let out = Command::new(bin())
        .arg("--config")
        .arg(&work.config)
        .arg("gen")
        .env("DRAFTRL_SEED", "12345")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs = std::fs::read_dir(&work.out).unwrap().count();
    assert_eq!(dirs, 2, "override must land in a different run dir");
}

#[test]
fn full_pipeline_report_and_eval_round_trip() {
    let work = setup();
    assert!(run(&work, &["gen"]).status.success());
    let out = run(&work, &["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = run(&work, &["report"]);
    assert!(report.status.success());
    let root = run_dir(&work.out).join("reports/full");
    let table = std::fs::read_to_string(root.join("comparison.txt")).unwrap();
    // header plus 3 stages x 3 modes
    assert_eq!(table.lines().count(), 1 + 9, "table: {table}");
    let csv = std::fs::read_to_string(root.join("trend.csv")).unwrap();
    let rows = draftrl_core::report::parse_trend_csv(&csv).unwrap();
    assert_eq!(rows.len(), 9);
    // EFF column recomputes from the Acc and Tokens columns exactly
    for row in &rows {
        let expect = draftrl_core::eval::eff(row.acc, row.tokens)
            .map(draftrl_core::eval::trunc2);
        assert_eq!(row.eff, expect);
    }
    assert_eq!(draftrl_core::report::trend_csv(&rows), csv);

    // ad-hoc eval against the final checkpoint
    let ckpt = run_dir(&work.out).join("ckpt/full-rl2.ckpt");
    let eval = run(
        &work,
        &["eval", "--ckpt", ckpt.to_str().unwrap(), "--split", "eval", "--mode", "draft"],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("Acc"), "eval prints the report table: {stdout}");

    // resume from rl2 succeeds and reuses earlier checkpoints
    let resume = run(&work, &["resume", "--from", "rl2"]);
    assert!(resume.status.success(), "{}", String::from_utf8_lossy(&resume.stderr));
}

#[test]
fn ablate_lists_variants_and_rejects_empty() {
    let work = setup();
    let out = run(&work, &["ablate", "--skip", "sft"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("skip-sft"));
    assert!(!stdout.contains("sft on"), "sft stage should be gone: {stdout}");

    let bad = run(&work, &["ablate", "--skip", "sft,rl1,rl2"]);
    assert!(!bad.status.success());
}

#[test]
fn rl_before_sft_is_a_missing_artifact_error() {
    let work = setup();
    assert!(run(&work, &["gen"]).status.success());
    let out = run(&work, &["rl", "--stage", "rl1"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("sft"), "should point at the sft stage: {msg}");
}
