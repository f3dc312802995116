//! Bounded-length sampling: greedy, temperature, and nucleus (top-p) decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{PromptMode, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::rng_from;

use super::net::{log_softmax_in_place, GenState};
use super::PolicyParams;

/// How generation for one trace is configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Hard cap on generated tokens (the stage L_max).
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Greedy decoding ignores temperature and top_p.
    pub greedy: bool,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize) -> GenerationConfig {
        GenerationConfig { max_new_tokens, temperature: 1.0, top_p: 1.0, greedy: true, seed: 0 }
    }

    pub fn sampled(max_new_tokens: usize, temperature: f64, top_p: f64, seed: u64) -> Self {
        GenerationConfig { max_new_tokens, temperature, top_p, greedy: false, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be >= 1"));
        }
        if !self.greedy {
            if !(self.temperature > 0.0) {
                return Err(Error::config("temperature must be > 0"));
            }
            if !(self.top_p > 0.0 && self.top_p <= 1.0) {
                return Err(Error::config("top_p must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Eos,
    Length,
}

/// One sampled generation.
///
/// `tokens` are the generated tokens only (the final EOS included when one
/// was emitted); `logprobs` are the policy's own log-probabilities of those
/// tokens at temperature 1 — exactly the old-policy terms a later importance
/// ratio needs, regardless of how the tokens were drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trace {
    pub mode: PromptMode,
    /// Conditioning tokens: `<BOS> <mode> question "\n\n"`.
    pub prompt: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub stop: StopReason,
}

impl Trace {
    pub fn generated_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.len()
    }

    /// Prompt followed by generated tokens.
    pub fn full_input(&self) -> Vec<TokenId> {
        let mut seq = Vec::with_capacity(self.prompt.len() + self.tokens.len());
        seq.extend_from_slice(&self.prompt);
        seq.extend_from_slice(&self.tokens);
        seq
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Draw a token: temperature-scaled softmax restricted to the smallest prefix
/// of the sorted distribution with cumulative mass >= top_p.
fn draw(logits: &[f64], temperature: f64, top_p: f64, rng: &mut impl Rng) -> usize {
    let mut tempered: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
    log_softmax_in_place(&mut tempered);
    let mut order: Vec<usize> = (0..tempered.len()).collect();
    order.sort_by(|&a, &b| {
        tempered[b].partial_cmp(&tempered[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut cum = 0.0;
    let mut cut = order.len() - 1;
    for (rank, &idx) in order.iter().enumerate() {
        cum += tempered[idx].exp();
        if cum >= top_p - 1e-12 {
            cut = rank;
            break;
        }
    }
    let total: f64 = order[..=cut].iter().map(|&i| tempered[i].exp()).sum();
    let mut u = rng.gen::<f64>() * total;
    for &idx in &order[..=cut] {
        u -= tempered[idx].exp();
        if u <= 0.0 {
            return idx;
        }
    }
    order[cut]
}

/// Generate a trace for `question` under the given prompt mode.
///
/// Stops at EOS or when `max_new_tokens` is reached; never writes past the
/// context window.
pub fn sample(
    params: &PolicyParams,
    vocab: &Vocabulary,
    mode: PromptMode,
    question: &[TokenId],
    config: &GenerationConfig,
) -> Result<Trace> {
    config.validate()?;
    if params.dims.vocab != vocab.size() {
        return Err(Error::integrity(format!(
            "model vocab {} != vocabulary size {}",
            params.dims.vocab,
            vocab.size()
        )));
    }
    let prompt = vocab.build_prompt(mode, question);
    if prompt.len() + 1 > params.dims.context {
        return Err(Error::ContextOverflow {
            len: prompt.len() + 1,
            max: params.dims.context,
        });
    }
    let budget = config.max_new_tokens.min(params.dims.context - prompt.len());
    let eos = vocab.specials().eos;
    let mut rng = rng_from(config.seed);

    let mut state = GenState::new(params);
    let mut logits = Vec::new();
    for &t in &prompt {
        logits = state.advance(params, t)?;
    }

    let mut tokens = Vec::with_capacity(budget);
    let mut logprobs = Vec::with_capacity(budget);
    let mut stop = StopReason::Length;
    for step in 0..budget {
        let mut model_lp = logits.clone();
        log_softmax_in_place(&mut model_lp);
        let next = if config.greedy {
            argmax(&logits)
        } else {
            draw(&logits, config.temperature, config.top_p, &mut rng)
        };
        tokens.push(next as TokenId);
        logprobs.push(model_lp[next]);
        if next as TokenId == eos {
            stop = StopReason::Eos;
            break;
        }
        if step + 1 < budget {
            logits = state.advance(params, next as TokenId)?;
        }
    }

    Ok(Trace { mode, prompt, tokens, logprobs, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{logprobs, Dims};

    fn vocab() -> &'static Vocabulary {
        Vocabulary::standard()
    }

    fn params() -> PolicyParams {
        PolicyParams::init(Dims { vocab: vocab().size(), embed: 16, context: 64 }, 7)
    }

    fn q() -> Vec<TokenId> {
        vocab().encode("3+4-2").unwrap()
    }

    #[test]
    fn cap_of_one_generates_exactly_one_token() {
        let t = sample(&params(), vocab(), PromptMode::Draft, &q(), &GenerationConfig::greedy(1))
            .unwrap();
        assert_eq!(t.generated_len(), 1);
        assert_eq!(t.logprobs.len(), 1);
    }

    #[test]
    fn greedy_decoding_is_deterministic() {
        let cfg = GenerationConfig::greedy(24);
        let a = sample(&params(), vocab(), PromptMode::Step, &q(), &cfg).unwrap();
        let b = sample(&params(), vocab(), PromptMode::Step, &q(), &cfg).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.logprobs, b.logprobs);
    }

    #[test]
    fn seeded_sampling_is_deterministic_and_capped() {
        let cfg = GenerationConfig::sampled(40, 0.6, 0.95, 123);
        let p = params();
        let a = sample(&p, vocab(), PromptMode::Draft, &q(), &cfg).unwrap();
        let b = sample(&p, vocab(), PromptMode::Draft, &q(), &cfg).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert!(a.generated_len() <= 40);
    }

    #[test]
    fn sampled_tokens_lie_in_the_nucleus() {
        // Re-check every sampled token against an independently computed
        // smallest prefix of the sorted tempered distribution with
        // cumulative mass >= top_p.
        let p = params();
        let (temperature, top_p) = (0.6, 0.95);
        for seed in 0..8u64 {
            let cfg = GenerationConfig::sampled(24, temperature, top_p, seed);
            let t = sample(&p, vocab(), PromptMode::Draft, &q(), &cfg).unwrap();
            let prompt = vocab().build_prompt(PromptMode::Draft, &q());
            let mut context = prompt[2..].to_vec(); // logprobs re-adds BOS+mode
            for &tok in &t.tokens {
                let table = logprobs(&p, vocab(), PromptMode::Draft, &context).unwrap();
                let last = table.last().unwrap();
                let mut probs: Vec<(usize, f64)> = last
                    .iter()
                    .map(|&lp| lp / temperature)
                    .enumerate()
                    .collect();
                let max = probs.iter().map(|&(_, x)| x).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = probs.iter().map(|&(_, x)| (x - max).exp()).sum();
                for (_, x) in probs.iter_mut() {
                    *x = (*x - max).exp() / z;
                }
                probs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut nucleus = std::collections::HashSet::new();
                let mut cum = 0.0;
                for &(i, pr) in &probs {
                    nucleus.insert(i);
                    cum += pr;
                    if cum >= top_p - 1e-12 {
                        break;
                    }
                }
                assert!(nucleus.contains(&(tok as usize)), "token {tok} outside nucleus");
                context.push(tok);
            }
        }
    }

    #[test]
    fn question_too_long_for_context_errors() {
        let p = PolicyParams::init(Dims { vocab: vocab().size(), embed: 8, context: 8 }, 1);
        let err = sample(&p, vocab(), PromptMode::Draft, &q(), &GenerationConfig::greedy(4))
            .unwrap_err();
        assert!(matches!(err, Error::ContextOverflow { .. }));
    }

    #[test]
    fn generation_never_exceeds_the_cap_or_context() {
        let p = params();
        for cap in [1usize, 3, 17, 200] {
            let t = sample(&p, vocab(), PromptMode::Adaptive, &q(), &GenerationConfig::greedy(cap))
                .unwrap();
            assert!(t.generated_len() <= cap);
            assert!(t.prompt_len() + t.generated_len() <= p.dims.context);
        }
    }

    #[test]
    fn stored_logprobs_equal_full_recompute_exactly() {
        // Incremental generation must agree bit-for-bit with the
        // teacher-forced table, so importance ratios start at exactly 1.
        let p = params();
        let t = sample(&p, vocab(), PromptMode::Draft, &q(), &GenerationConfig::greedy(16))
            .unwrap();
        let full = t.full_input();
        let table = {
            // context excludes the BOS and mode token that logprobs re-adds
            logprobs(&p, vocab(), PromptMode::Draft, &full[2..]).unwrap()
        };
        for (j, &tok) in t.tokens.iter().enumerate() {
            let row = &table[t.prompt_len() + j - 1];
            assert_eq!(t.logprobs[j], row[tok as usize], "token {j}");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(GenerationConfig::sampled(5, 0.0, 0.9, 1).validate().is_err());
        assert!(GenerationConfig::sampled(5, 1.0, 0.0, 1).validate().is_err());
        assert!(GenerationConfig::sampled(5, 1.0, 1.1, 1).validate().is_err());
        assert!(GenerationConfig::greedy(0).validate().is_err());
    }
}
