//! Evaluation protocol: pass@1 (greedy and unbiased multi-sample), token
//! counts, token efficiency, difficulty stratification, correct-vs-wrong
//! length analysis, and reasoning-step phase tallies.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{extract_answer, split_steps, PromptMode, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::grpo::reward;
use crate::policy::{sample, GenerationConfig, PolicyParams, StopReason, Trace};
use crate::rng::substream_n;
use crate::taskgen::{DatasetSplit, Problem};

/// Six-category toy phase taxonomy for reasoning steps.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Restate,
    Compute,
    Verify,
    ExploreAlternative,
    Summarize,
    Other,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Restate,
        Phase::Compute,
        Phase::Verify,
        Phase::ExploreAlternative,
        Phase::Summarize,
        Phase::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Restate => "restate",
            Phase::Compute => "compute",
            Phase::Verify => "verify",
            Phase::ExploreAlternative => "explore-alternative",
            Phase::Summarize => "summarize",
            Phase::Other => "other",
        }
    }
}

/// Assigns a phase to one step segment. Total over the taxonomy:
/// unclassifiable steps land in `Other`, never an error.
pub trait StepClassifier: Sync {
    fn classify(&self, step_text: &str) -> Phase;
}

/// Default keyword/pattern classifier over the trace-text conventions.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleBasedClassifier;

impl StepClassifier for RuleBasedClassifier {
    fn classify(&self, step: &str) -> Phase {
        if step.starts_with("Q:") {
            Phase::Restate
        } else if step.starts_with("C:") {
            Phase::Verify
        } else if step.starts_with("S:") || step.starts_with("<ANS>") {
            Phase::Summarize
        } else if step.starts_with("A:") {
            Phase::ExploreAlternative
        } else if step.contains('=')
            && !step.is_empty()
            && step
                .chars()
                .all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '*' | '=' | '(' | ')'))
        {
            Phase::Compute
        } else {
            Phase::Other
        }
    }
}

/// Cumulative step counts per phase over a set of traces.
pub fn phase_tally(
    vocab: &Vocabulary,
    traces: &[Vec<TokenId>],
    classifier: &dyn StepClassifier,
) -> Result<BTreeMap<Phase, u64>> {
    let mut tally: BTreeMap<Phase, u64> = Phase::ALL.iter().map(|&p| (p, 0)).collect();
    for tokens in traces {
        let text = vocab.decode(tokens)?;
        for seg in split_steps(&text) {
            *tally.entry(classifier.classify(seg)).or_insert(0) += 1;
        }
    }
    Ok(tally)
}

/// Unbiased pass@1 from `n` samples per problem: mean of `c/n`, as a
/// percentage. With `n = 1` this is plain accuracy.
pub fn pass_at_1_unbiased(n: usize, correct_counts: &[usize]) -> Result<f64> {
    if n < 1 {
        return Err(Error::config("pass@1 needs n >= 1"));
    }
    if correct_counts.is_empty() {
        return Err(Error::config("pass@1 needs at least one problem"));
    }
    for &c in correct_counts {
        if c > n {
            return Err(Error::integrity(format!("correct count {c} exceeds samples {n}")));
        }
    }
    let mean =
        correct_counts.iter().map(|&c| c as f64 / n as f64).sum::<f64>() / correct_counts.len() as f64;
    Ok(mean * 100.0)
}

/// Token efficiency: accuracy over mean tokens, times 100. Undefined (absent)
/// when there are no tokens to divide by.
pub fn eff(acc: f64, mean_tokens: f64) -> Option<f64> {
    if mean_tokens > 0.0 {
        Some(acc / mean_tokens * 100.0)
    } else {
        None
    }
}

/// Truncate toward zero at two decimals — the display rule for EFF columns.
pub fn trunc2(x: f64) -> f64 {
    (x * 100.0).trunc() / 100.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DifficultyRow {
    pub level: u8,
    pub count: usize,
    pub acc: f64,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub mode: PromptMode,
    /// Percentage in [0, 100].
    pub acc: f64,
    /// Mean generated tokens per trace (reasoning + answer, EOS excluded).
    pub mean_tokens: f64,
    /// acc / mean_tokens * 100; absent when mean_tokens is zero.
    pub eff: Option<f64>,
    pub per_difficulty: Vec<DifficultyRow>,
    /// (mean length of correct traces, mean length of wrong traces).
    pub len_by_correctness: (Option<f64>, Option<f64>),
    pub step_histogram: BTreeMap<Phase, u64>,
    pub sample_config: GenerationConfig,
}

/// Per-trace record persisted as JSONL for the recount oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub problem_id: String,
    pub difficulty: u8,
    pub mode: PromptMode,
    pub sample_index: usize,
    pub text: String,
    pub token_count: usize,
    pub stop: StopReason,
    pub answer: Option<i64>,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_mode: Option<TraceStyleChoice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceStyleChoice {
    Step,
    Draft,
}

/// Evaluation settings: one greedy sample, or `samples > 1` draws at the
/// given temperature/top-p scored with the unbiased pass@1 estimator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl EvalConfig {
    pub fn greedy(max_new_tokens: usize, seed: u64) -> EvalConfig {
        EvalConfig { max_new_tokens, samples: 1, temperature: 0.6, top_p: 0.95, seed }
    }

    fn generation(&self, sample_seed: u64) -> GenerationConfig {
        if self.samples <= 1 {
            GenerationConfig::greedy(self.max_new_tokens)
        } else {
            GenerationConfig::sampled(self.max_new_tokens, self.temperature, self.top_p, sample_seed)
        }
    }
}

/// Generated tokens minus the terminating EOS, if any.
pub fn response_len(trace: &Trace) -> usize {
    match trace.stop {
        StopReason::Eos => trace.tokens.len().saturating_sub(1),
        StopReason::Length => trace.tokens.len(),
    }
}

/// Evaluate a checkpoint on a split under one prompt mode.
pub fn evaluate(
    params: &PolicyParams,
    vocab: &Vocabulary,
    split: &DatasetSplit,
    mode: PromptMode,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<TraceRecord>)> {
    evaluate_with(
        |problem: &Problem, sample_seed: u64| {
            sample(params, vocab, mode, &problem.question_tokens, &config.generation(sample_seed))
        },
        vocab,
        split,
        mode,
        config,
    )
}

/// Evaluation sweep over an arbitrary trace source. `evaluate` wires in the
/// policy sampler; tests inject oracle-teacher traces through the same path.
pub fn evaluate_with<F>(
    generator: F,
    vocab: &Vocabulary,
    split: &DatasetSplit,
    mode: PromptMode,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<TraceRecord>)>
where
    F: Fn(&Problem, u64) -> Result<Trace> + Sync,
{
    if split.problems.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let n = config.samples.max(1);

    // A generation failure is recorded as an incorrect zero-length trace;
    // the sweep itself never aborts.
    let per_problem: Vec<Vec<TraceRecord>> = split
        .problems
        .par_iter()
        .enumerate()
        .map(|(i, problem)| {
            (0..n)
                .map(|j| {
                    let sample_seed =
                        substream_n(config.seed, "eval-sample", (i * n + j) as u64);
                    match generator(problem, sample_seed) {
                        Ok(trace) => {
                            let answer = extract_answer(vocab, &trace.tokens);
                            let r = reward(vocab, &trace, problem);
                            let sp = vocab.specials();
                            let first = trace.tokens.first().copied();
                            let chosen_mode = if mode == PromptMode::Adaptive {
                                if first == Some(sp.draft_mode) {
                                    Some(TraceStyleChoice::Draft)
                                } else if first == Some(sp.step_mode) {
                                    Some(TraceStyleChoice::Step)
                                } else {
                                    None
                                }
                            } else {
                                None
                            };
                            TraceRecord {
                                problem_id: problem.id.clone(),
                                difficulty: problem.difficulty,
                                mode,
                                sample_index: j,
                                text: vocab.decode(&trace.tokens).unwrap_or_default(),
                                token_count: response_len(&trace),
                                stop: trace.stop,
                                answer,
                                reward: r,
                                chosen_mode,
                            }
                        }
                        Err(_) => TraceRecord {
                            problem_id: problem.id.clone(),
                            difficulty: problem.difficulty,
                            mode,
                            sample_index: j,
                            text: String::new(),
                            token_count: 0,
                            stop: StopReason::Length,
                            answer: None,
                            reward: 0.0,
                            chosen_mode: None,
                        },
                    }
                })
                .collect()
        })
        .collect();

    let correct_counts: Vec<usize> = per_problem
        .iter()
        .map(|records| records.iter().filter(|r| r.reward > 0.5).count())
        .collect();
    let acc = pass_at_1_unbiased(n, &correct_counts)?;

    let records: Vec<TraceRecord> = per_problem.into_iter().flatten().collect();
    let total: usize = records.iter().map(|r| r.token_count).sum();
    let mean_tokens = total as f64 / records.len() as f64;

    let mut per_level: BTreeMap<u8, (usize, usize, usize)> = BTreeMap::new();
    for r in &records {
        let e = per_level.entry(r.difficulty).or_insert((0, 0, 0));
        e.0 += 1;
        e.1 += (r.reward > 0.5) as usize;
        e.2 += r.token_count;
    }
    let per_difficulty = per_level
        .into_iter()
        .map(|(level, (count, correct, tokens))| DifficultyRow {
            level,
            count,
            acc: correct as f64 / count as f64 * 100.0,
            mean_tokens: tokens as f64 / count as f64,
        })
        .collect();

    let mean_len = |want_correct: bool| -> Option<f64> {
        let lens: Vec<usize> = records
            .iter()
            .filter(|r| (r.reward > 0.5) == want_correct)
            .map(|r| r.token_count)
            .collect();
        if lens.is_empty() {
            None
        } else {
            Some(lens.iter().sum::<usize>() as f64 / lens.len() as f64)
        }
    };

    let mut step_histogram: BTreeMap<Phase, u64> = Phase::ALL.iter().map(|&p| (p, 0)).collect();
    let classifier = RuleBasedClassifier;
    for r in &records {
        for seg in split_steps(&r.text) {
            *step_histogram.entry(classifier.classify(seg)).or_insert(0) += 1;
        }
    }

    let report = EvalReport {
        mode,
        acc,
        mean_tokens,
        eff: eff(acc, mean_tokens),
        per_difficulty,
        len_by_correctness: (mean_len(true), mean_len(false)),
        step_histogram,
        sample_config: config.generation(0),
    };
    Ok((report, records))
}

/// Total steps across the histogram.
pub fn histogram_total(hist: &BTreeMap<Phase, u64>) -> u64 {
    hist.values().sum()
}
