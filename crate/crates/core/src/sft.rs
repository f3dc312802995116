//! Draft distillation: build the filtered SFT dataset from teacher traces and
//! train the policy by cross-entropy.
//!
//! The kept/filtered provenance tracks one draft trace per pool problem,
//! filtered by exact answer match. The training diet additionally carries
//! step-style examples under `<STEP>` (the toy stand-in for a base model that
//! already reasons verbosely) and an adaptive-exposure slice under `<ADAPT>`
//! whose targets begin with the mode token matching the trace style. The loss
//! masks everything up to and including the prompt delimiter: only target
//! positions contribute.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{PromptMode, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::policy::net::{backward_weighted, forward_cache, row_log_softmax};
use crate::policy::PolicyParams;
use crate::rng::{rng_from, substream};
use crate::taskgen::{teacher_solve, DatasetSplit, TraceStyle};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftExample {
    pub problem_id: String,
    pub prompt_mode: PromptMode,
    pub style: TraceStyle,
    pub question: Vec<TokenId>,
    /// Trace tokens plus EOS; for adaptive examples, prefixed by the mode
    /// token matching the style.
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generated: usize,
    pub kept: usize,
    pub filtered: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilteredRecord {
    pub problem_id: String,
    pub reason: String,
    pub emitted: i64,
    pub gold: i64,
}

#[derive(Debug, Clone)]
pub struct SftDataset {
    pub examples: Vec<SftExample>,
    /// Draft-trace filtering counts: kept + filtered = generated = pool size.
    pub provenance: Provenance,
    pub filtered: Vec<FilteredRecord>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SftBuildConfig {
    /// Teacher answer-corruption probability.
    pub error_rate: f64,
    /// Fraction of problems that also contribute a step-style example.
    /// Step format needs far fewer examples than the arithmetic content, so
    /// this trades training time against step-mode polish.
    pub step_fraction: f64,
    /// Fraction of problems that get an extra `<ADAPT>` example.
    pub adaptive_fraction: f64,
    /// Difficulty at or below which the adaptive target is draft-style.
    pub adaptive_draft_max_level: u8,
}

impl Default for SftBuildConfig {
    fn default() -> Self {
        SftBuildConfig {
            error_rate: 0.58,
            step_fraction: 1.0,
            adaptive_fraction: 0.5,
            adaptive_draft_max_level: 3,
        }
    }
}

/// Build the SFT dataset: one teacher draft trace per pool problem, dropping
/// (and counting) answer mismatches, plus the step and adaptive diet slices.
pub fn build_sft_dataset(
    pool: &DatasetSplit,
    config: &SftBuildConfig,
    seed: u64,
) -> Result<SftDataset> {
    if pool.problems.is_empty() {
        return Err(Error::config("SFT pool is empty"));
    }
    if !(0.0..=1.0).contains(&config.adaptive_fraction) {
        return Err(Error::config("adaptive_fraction must be in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&config.step_fraction) {
        return Err(Error::config("step_fraction must be in [0, 1]"));
    }
    let vocab = Vocabulary::standard();
    let eos = vocab.specials().eos;
    let draft_seed = substream(seed, "sft-draft");
    let step_seed = substream(seed, "sft-step");
    let mut step_rng = rng_from(substream(seed, "sft-step-pick"));
    let mut adapt_rng = rng_from(substream(seed, "sft-adapt"));

    let mut examples = Vec::new();
    let mut filtered = Vec::new();
    let mut kept = 0usize;

    for problem in &pool.problems {
        let draft = teacher_solve(problem, TraceStyle::Draft, config.error_rate, draft_seed)?;
        let draft_target = if draft.emitted_answer == problem.gold_answer {
            kept += 1;
            let mut target = draft.tokens.clone();
            target.push(eos);
            examples.push(SftExample {
                problem_id: problem.id.clone(),
                prompt_mode: PromptMode::Draft,
                style: TraceStyle::Draft,
                question: problem.question_tokens.clone(),
                target: target.clone(),
            });
            Some(target)
        } else {
            filtered.push(FilteredRecord {
                problem_id: problem.id.clone(),
                reason: "answer_mismatch".to_string(),
                emitted: draft.emitted_answer,
                gold: problem.gold_answer,
            });
            None
        };

        // Draw per problem so the diet stays stable as fractions change.
        let take_step = step_rng.gen::<f64>() < config.step_fraction;
        let take_adaptive = adapt_rng.gen::<f64>() < config.adaptive_fraction;
        let need_step_target =
            take_step || (take_adaptive && problem.difficulty > config.adaptive_draft_max_level);
        let step_target = if need_step_target {
            let step = teacher_solve(problem, TraceStyle::Step, config.error_rate, step_seed)?;
            if step.emitted_answer == problem.gold_answer {
                let mut target = step.tokens.clone();
                target.push(eos);
                if take_step {
                    examples.push(SftExample {
                        problem_id: problem.id.clone(),
                        prompt_mode: PromptMode::Step,
                        style: TraceStyle::Step,
                        question: problem.question_tokens.clone(),
                        target: target.clone(),
                    });
                }
                Some(target)
            } else {
                None
            }
        } else {
            None
        };

        // Adaptive exposure: the target is the style the mode-choice token
        // announces — draft for easy problems, step for hard ones.
        if take_adaptive {
            let (style, base) = if problem.difficulty <= config.adaptive_draft_max_level {
                (TraceStyle::Draft, &draft_target)
            } else {
                (TraceStyle::Step, &step_target)
            };
            if let Some(base) = base {
                let mode_tok = match style {
                    TraceStyle::Draft => vocab.specials().draft_mode,
                    TraceStyle::Step => vocab.specials().step_mode,
                };
                let mut target = Vec::with_capacity(base.len() + 1);
                target.push(mode_tok);
                target.extend_from_slice(base);
                examples.push(SftExample {
                    problem_id: problem.id.clone(),
                    prompt_mode: PromptMode::Adaptive,
                    style,
                    question: problem.question_tokens.clone(),
                    target,
                });
            }
        }
    }

    Ok(SftDataset {
        examples,
        provenance: Provenance {
            generated: pool.problems.len(),
            kept,
            filtered: pool.problems.len() - kept,
        },
        filtered,
    })
}

/// Persist kept examples as JSONL plus the filtered sidecar.
pub fn save_sft_dataset(
    dataset: &SftDataset,
    vocab: &Vocabulary,
    examples_path: &Path,
    filtered_path: &Path,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        problem_id: &'a str,
        mode: PromptMode,
        style: TraceStyle,
        question: String,
        target: String,
        kept: bool,
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(examples_path)?);
    for ex in &dataset.examples {
        let row = Row {
            problem_id: &ex.problem_id,
            mode: ex.prompt_mode,
            style: ex.style,
            question: vocab.decode(&ex.question)?,
            target: vocab.decode(&ex.target)?,
            kept: true,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let mut side = std::io::BufWriter::new(std::fs::File::create(filtered_path)?);
    for rec in &dataset.filtered {
        serde_json::to_writer(&mut side, rec)?;
        side.write_all(b"\n")?;
    }
    side.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SftTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

/// One tokenized training sequence with its supervised span.
struct PackedExample {
    seq: Vec<TokenId>,
    target_start: usize,
}

fn pack(vocab: &Vocabulary, example: &SftExample, context: usize) -> Result<PackedExample> {
    let prompt = vocab.build_prompt(example.prompt_mode, &example.question);
    let mut seq = prompt.clone();
    seq.extend_from_slice(&example.target);
    if seq.len() > context {
        return Err(Error::ContextOverflow { len: seq.len(), max: context });
    }
    Ok(PackedExample { seq, target_start: prompt.len() })
}

fn example_nll_and_grad(
    params: &PolicyParams,
    packed: &PackedExample,
    grad: Option<&mut [f64]>,
) -> Result<(f64, usize)> {
    let cache = forward_cache(params, &packed.seq)?;
    let mut nll = 0.0;
    let mut weights = Vec::with_capacity(packed.seq.len() - packed.target_start);
    for pos in packed.target_start..packed.seq.len() {
        let row = row_log_softmax(params, &cache, pos - 1);
        let tok = packed.seq[pos];
        nll -= row[tok as usize];
        weights.push((pos - 1, tok, 1.0));
    }
    if let Some(grad) = grad {
        backward_weighted(params, &packed.seq, &cache, &weights, grad)?;
    }
    Ok((nll, weights.len()))
}

/// Mean per-token NLL over the dataset, without touching parameters.
pub fn dataset_loss(
    params: &PolicyParams,
    vocab: &Vocabulary,
    dataset: &SftDataset,
) -> Result<f64> {
    let (loss, _) = dataset_loss_and_grad(params, vocab, dataset, false)?;
    Ok(loss)
}

/// Mean per-token NLL and (optionally) its exact gradient over the dataset.
pub fn dataset_loss_and_grad(
    params: &PolicyParams,
    vocab: &Vocabulary,
    dataset: &SftDataset,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if dataset.examples.is_empty() {
        return Err(Error::config("SFT dataset has no examples"));
    }
    let packed: Vec<PackedExample> = dataset
        .examples
        .iter()
        .map(|ex| pack(vocab, ex, params.dims.context))
        .collect::<Result<_>>()?;
    let results: Vec<(f64, usize, Vec<f64>)> = packed
        .par_iter()
        .map(|p| -> Result<(f64, usize, Vec<f64>)> {
            if want_grad {
                let mut g = vec![0.0; params.flat.len()];
                let (nll, count) = example_nll_and_grad(params, p, Some(&mut g))?;
                Ok((nll, count, g))
            } else {
                let (nll, count) = example_nll_and_grad(params, p, None)?;
                Ok((nll, count, Vec::new()))
            }
        })
        .collect::<Result<_>>()?;
    let total_tokens: usize = results.iter().map(|r| r.1).sum();
    let total_nll: f64 = results.iter().map(|r| r.0).sum();
    let loss = total_nll / total_tokens as f64;
    let mut grad = vec![0.0; if want_grad { params.flat.len() } else { 0 }];
    if want_grad {
        // grad of sum(log p) accumulated with weight +1; loss gradient is the
        // negation scaled by token count
        for (_, _, g) in &results {
            for (acc, &x) in grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
        let scale = -1.0 / total_tokens as f64;
        for x in grad.iter_mut() {
            *x *= scale;
        }
    }
    Ok((loss, grad))
}

/// Train by SGD on the mean per-token cross-entropy. Returns the per-epoch
/// running training loss.
pub fn sft_train(
    params: &mut PolicyParams,
    vocab: &Vocabulary,
    dataset: &SftDataset,
    config: &SftTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if dataset.examples.is_empty() {
        return Err(Error::config("SFT dataset has no examples"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::config("batch_size and epochs must be >= 1"));
    }
    let packed: Vec<PackedExample> = dataset
        .examples
        .iter()
        .map(|ex| pack(vocab, ex, params.dims.context))
        .collect::<Result<_>>()?;

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.flat.len());
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..packed.len()).collect();
        let mut rng = rng_from(crate::rng::substream_n(seed, "sft-shuffle", epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let results: Vec<(f64, usize, Vec<f64>)> = chunk
                .par_iter()
                .map(|&idx| -> Result<(f64, usize, Vec<f64>)> {
                    let mut g = vec![0.0; params.flat.len()];
                    let (nll, count) = example_nll_and_grad(params, &packed[idx], Some(&mut g))?;
                    Ok((nll, count, g))
                })
                .collect::<Result<_>>()?;
            let batch_tokens: usize = results.iter().map(|r| r.1).sum();
            let batch_nll: f64 = results.iter().map(|r| r.0).sum();
            if !batch_nll.is_finite() {
                return Err(Error::NonFinite {
                    what: "sft batch loss".to_string(),
                    diagnostics: format!(
                        "epoch {epoch}, batch of {} examples, nll {batch_nll}",
                        chunk.len()
                    ),
                });
            }
            // descend the mean per-token NLL of the batch
            let mut loss_grad = vec![0.0; params.flat.len()];
            let scale = -1.0 / batch_tokens as f64;
            for (_, _, g) in &results {
                for (acc, &x) in loss_grad.iter_mut().zip(g) {
                    *acc += scale * x;
                }
            }
            optimizer.descend(params, &loss_grad)?;
            epoch_nll += batch_nll;
            epoch_tokens += batch_tokens;
        }
        params.assert_finite()?;
        curve.push(epoch_nll / epoch_tokens as f64);
    }
    Ok(curve)
}
