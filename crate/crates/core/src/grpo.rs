//! Group-relative policy optimization.
//!
//! For each problem, a group of G rollouts is drawn from the frozen old
//! policy; the binary correctness reward is standardized within the group to
//! give per-trace advantages; the update ascends the token-level clipped
//! surrogate
//!
//! ```text
//! (1/G) sum_i (1/|o_i|) sum_t min(r_{i,t} A_i, clip(r_{i,t}, 1-eps, 1+eps) A_i)
//! ```
//!
//! with r computed against the log-probs *stored* in each trace at rollout
//! time. There is no KL term, no entropy bonus, and no value network; the
//! advantage is constant across a trace's tokens (outcome-level reward).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{extract_answer, PromptMode, Vocabulary};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::policy::net::{backward_weighted, forward_cache, row_log_softmax};
use crate::policy::{sample, GenerationConfig, PolicyParams, Trace};
use crate::rng::substream_n;
use crate::taskgen::Problem;

/// Binary correctness reward: 1 iff the extracted answer equals the gold
/// answer. Truncated traces without a well-formed span extract nothing and
/// score 0.
pub fn reward(vocab: &Vocabulary, trace: &Trace, problem: &Problem) -> f64 {
    match extract_answer(vocab, &trace.tokens) {
        Some(answer) if answer == problem.gold_answer => 1.0,
        _ => 0.0,
    }
}

/// Group-standardized advantages: `(r - mean) / std` with a 1e-8 guard; a
/// group with (near-)equal rewards yields identically zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::integrity(format!("group size {g} must be >= 2")));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std <= 1e-8 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// G traces for one problem, with rewards and group-relative advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub problem_id: String,
    pub traces: Vec<Trace>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(problem_id: String, traces: Vec<Trace>, rewards: Vec<f64>) -> Result<Self> {
        if traces.len() != rewards.len() {
            return Err(Error::integrity("traces and rewards are misaligned"));
        }
        let advantages = group_advantages(&rewards)?;
        Ok(RolloutGroup { problem_id, traces, rewards, advantages })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// Rollouts per question (G).
    pub group_size: usize,
    /// Clipping bound on the token-level importance ratio.
    pub clip_eps: f64,
    pub learning_rate: f64,
    /// Groups per optimizer update within a rollout batch.
    pub mini_batch_size: usize,
    /// Hard cap on generated tokens per rollout (the stage L_max).
    pub max_new_tokens: usize,
    /// Optimizer epochs per rollout batch. One keeps updates on-policy
    /// (ratios start at 1); more makes clipping active.
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: crate::optim::OptimizerKind,
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size must be >= 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps must be in (0, 1)"));
        }
        if self.mini_batch_size == 0 || self.epochs == 0 || self.max_new_tokens == 0 {
            return Err(Error::config("mini_batch_size, epochs, max_new_tokens must be >= 1"));
        }
        Ok(())
    }
}

/// Value of the clipped surrogate plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SurrogateValue {
    pub value: f64,
    /// Fraction of tokens whose ratio left [1-eps, 1+eps].
    pub clip_fraction: f64,
    /// d(value)/d(new_logprob) per trace per token; zero where the clip
    /// deactivates the unclipped branch.
    pub token_weights: Vec<Vec<f64>>,
}

/// Surrogate objective of one group from per-token new log-probs, evaluated
/// against the stored old log-probs. Pure algebra; no model access.
pub fn surrogate_value(
    group: &RolloutGroup,
    new_logprobs: &[Vec<f64>],
    clip_eps: f64,
) -> Result<SurrogateValue> {
    let g = group.traces.len();
    if new_logprobs.len() != g {
        return Err(Error::integrity(format!(
            "new_logprobs has {} rows for a group of {g}",
            new_logprobs.len()
        )));
    }
    let mut value = 0.0;
    let mut clipped = 0usize;
    let mut tokens_total = 0usize;
    let mut token_weights = Vec::with_capacity(g);
    for (i, trace) in group.traces.iter().enumerate() {
        let old = &trace.logprobs;
        let new = &new_logprobs[i];
        if old.len() != trace.tokens.len() || new.len() != trace.tokens.len() {
            return Err(Error::integrity(format!(
                "trace {i}: {} tokens vs {} old / {} new log-probs",
                trace.tokens.len(),
                old.len(),
                new.len()
            )));
        }
        let len = trace.tokens.len();
        let adv = group.advantages[i];
        let mut weights = vec![0.0; len];
        if len == 0 {
            token_weights.push(weights);
            continue;
        }
        let inv_len = 1.0 / len as f64;
        let mut trace_term = 0.0;
        for t in 0..len {
            let ratio = (new[t] - old[t]).exp();
            tokens_total += 1;
            if ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps {
                clipped += 1;
            }
            let unclipped = ratio * adv;
            let clipped_term = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
            trace_term += unclipped.min(clipped_term);
            let dead = (adv > 0.0 && ratio > 1.0 + clip_eps)
                || (adv < 0.0 && ratio < 1.0 - clip_eps);
            if !dead {
                // d/d(new_lp) [ratio * adv] = ratio * adv
                weights[t] = adv * ratio * inv_len / g as f64;
            }
        }
        value += trace_term * inv_len;
        token_weights.push(weights);
    }
    value /= g as f64;
    let clip_fraction = if tokens_total == 0 { 0.0 } else { clipped as f64 / tokens_total as f64 };
    Ok(SurrogateValue { value, clip_fraction, token_weights })
}

/// Surrogate objective and its exact gradient w.r.t. the flat parameters,
/// re-forwarding each trace under the current parameters.
pub fn surrogate(
    params: &PolicyParams,
    group: &RolloutGroup,
    clip_eps: f64,
) -> Result<(SurrogateValue, Vec<f64>)> {
    let mut grad = vec![0.0; params.flat.len()];
    let sv = surrogate_into(params, group, clip_eps, &mut grad)?;
    Ok((sv, grad))
}

/// As `surrogate`, accumulating the gradient into `grad`.
pub fn surrogate_into(
    params: &PolicyParams,
    group: &RolloutGroup,
    clip_eps: f64,
    grad: &mut [f64],
) -> Result<SurrogateValue> {
    // New per-token log-probs under the current parameters.
    let mut new_logprobs = Vec::with_capacity(group.traces.len());
    let mut caches = Vec::with_capacity(group.traces.len());
    for trace in &group.traces {
        let input = trace.full_input();
        let cache = forward_cache(params, &input)?;
        let start = trace.prompt_len();
        let mut lps = Vec::with_capacity(trace.tokens.len());
        for (j, &tok) in trace.tokens.iter().enumerate() {
            let row = row_log_softmax(params, &cache, start + j - 1);
            lps.push(row[tok as usize]);
        }
        new_logprobs.push(lps);
        caches.push((input, cache));
    }
    let sv = surrogate_value(group, &new_logprobs, clip_eps)?;
    for (i, trace) in group.traces.iter().enumerate() {
        let (input, cache) = &caches[i];
        let start = trace.prompt_len();
        let weights: Vec<(usize, crate::codec::TokenId, f64)> = trace
            .tokens
            .iter()
            .enumerate()
            .filter(|(t, _)| sv.token_weights[i][*t] != 0.0)
            .map(|(t, &tok)| (start + t - 1, tok, sv.token_weights[i][t]))
            .collect();
        if !weights.is_empty() {
            backward_weighted(params, input, cache, &weights, grad)?;
        }
    }
    Ok(sv)
}

/// Metrics emitted by one GRPO step, one JSONL line in the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub mean_reward: f64,
    pub mean_len: f64,
    pub clip_frac: f64,
    pub objective: f64,
}

/// Roll out groups for a batch of problems and ascend the surrogate.
///
/// Rollouts are drawn at temperature 1 / top-p 1 under `rollout_mode`
/// (the draft prompt in the curriculum; step for the prompt ablation), so the
/// stored log-probs are exactly the old-policy terms.
pub fn grpo_step(
    params: &mut PolicyParams,
    vocab: &Vocabulary,
    batch: &[&Problem],
    config: &GrpoConfig,
    rollout_mode: PromptMode,
    seed: u64,
    optimizer: &mut Optimizer,
) -> Result<(StepMetrics, Vec<RolloutGroup>)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::config("grpo_step needs a non-empty problem batch"));
    }
    let g = config.group_size;
    let snapshot: &PolicyParams = params;

    let groups: Vec<RolloutGroup> = batch
        .par_iter()
        .enumerate()
        .map(|(i, problem)| -> Result<RolloutGroup> {
            let traces: Vec<Trace> = (0..g)
                .map(|j| {
                    let s = substream_n(seed, "rollout", (i * g + j) as u64);
                    let cfg = GenerationConfig::sampled(config.max_new_tokens, 1.0, 1.0, s);
                    sample(snapshot, vocab, rollout_mode, &problem.question_tokens, &cfg)
                })
                .collect::<Result<_>>()?;
            let rewards: Vec<f64> = traces.iter().map(|t| reward(vocab, t, problem)).collect();
            RolloutGroup::new(problem.id.clone(), traces, rewards)
        })
        .collect::<Result<_>>()?;

    let total_traces = groups.len() * g;
    let mean_reward =
        groups.iter().flat_map(|gr| gr.rewards.iter()).sum::<f64>() / total_traces as f64;
    let mean_len = groups
        .iter()
        .flat_map(|gr| gr.traces.iter())
        .map(|t| crate::eval::response_len(t) as f64)
        .sum::<f64>()
        / total_traces as f64;

    let mut objective_acc = 0.0;
    let mut clip_acc = 0.0;
    let mut updates = 0usize;
    for _epoch in 0..config.epochs {
        for chunk in groups.chunks(config.mini_batch_size) {
            // Per-group gradients against the current parameters, reduced in
            // a fixed order so worker count never changes the result.
            let results: Vec<(SurrogateValue, Vec<f64>)> = chunk
                .par_iter()
                .map(|group| surrogate(params, group, config.clip_eps))
                .collect::<Result<_>>()?;
            let scale = 1.0 / chunk.len() as f64;
            let mut value = 0.0;
            let mut clip = 0.0;
            let mut grad = vec![0.0; params.flat.len()];
            for (sv, g_i) in &results {
                value += sv.value * scale;
                clip += sv.clip_fraction * scale;
                for (acc, &x) in grad.iter_mut().zip(g_i) {
                    *acc += x * scale;
                }
            }
            if !value.is_finite() {
                let dump: Vec<String> = chunk
                    .iter()
                    .map(|gr| {
                        format!(
                            "{}: rewards {:?} advantages {:?} lens {:?}",
                            gr.problem_id,
                            gr.rewards,
                            gr.advantages,
                            gr.traces.iter().map(|t| t.tokens.len()).collect::<Vec<_>>()
                        )
                    })
                    .collect();
                return Err(Error::NonFinite {
                    what: "grpo objective".to_string(),
                    diagnostics: dump.join("; "),
                });
            }
            optimizer.ascend(params, &grad)?;
            objective_acc += value;
            clip_acc += clip;
            updates += 1;
        }
    }
    params.assert_finite()?;

    let metrics = StepMetrics {
        mean_reward,
        mean_len,
        clip_frac: clip_acc / updates as f64,
        objective: objective_acc / updates as f64,
    };
    Ok((metrics, groups))
}
