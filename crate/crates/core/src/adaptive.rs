//! Instance-adaptive inference: under `<ADAPT>` the policy first emits a
//! mode-choice token, then continues in the chosen style. The choice is soft
//! conditioning, not a hard router — an invalid first token just marks the
//! trace and it is scored as ordinary generation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{PromptMode, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::policy::{sample, GenerationConfig, PolicyParams, Trace};
use crate::taskgen::{Problem, TraceStyle};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveTrace {
    pub trace: Trace,
    /// Decoded from the first generated token; `None` when that token is not
    /// a mode token.
    pub chosen_mode: Option<TraceStyle>,
}

impl AdaptiveTrace {
    pub fn from_trace(vocab: &Vocabulary, trace: Trace) -> AdaptiveTrace {
        let sp = vocab.specials();
        let chosen_mode = match trace.tokens.first() {
            Some(&t) if t == sp.draft_mode => Some(TraceStyle::Draft),
            Some(&t) if t == sp.step_mode => Some(TraceStyle::Step),
            _ => None,
        };
        AdaptiveTrace { trace, chosen_mode }
    }

    pub fn choice_valid(&self) -> bool {
        self.chosen_mode.is_some()
    }
}

/// Sample under the `<ADAPT>` prompt and record the mode-choice token.
pub fn sample_adaptive(
    params: &PolicyParams,
    vocab: &Vocabulary,
    question: &[TokenId],
    config: &GenerationConfig,
) -> Result<AdaptiveTrace> {
    let trace = sample(params, vocab, PromptMode::Adaptive, question, config)?;
    Ok(AdaptiveTrace::from_trace(vocab, trace))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelChoice {
    pub draft: usize,
    pub valid: usize,
}

impl LevelChoice {
    pub fn fraction_draft(&self) -> Option<f64> {
        if self.valid == 0 {
            None
        } else {
            Some(self.draft as f64 / self.valid as f64)
        }
    }
}

/// Per-difficulty fraction of valid choices that selected draft.
pub fn mode_choice_stats(
    traces: &[AdaptiveTrace],
    problems: &[&Problem],
) -> Result<BTreeMap<u8, LevelChoice>> {
    if traces.len() != problems.len() {
        return Err(Error::integrity(format!(
            "{} traces vs {} problems",
            traces.len(),
            problems.len()
        )));
    }
    let mut stats: BTreeMap<u8, LevelChoice> = BTreeMap::new();
    for (trace, problem) in traces.iter().zip(problems) {
        if let Some(style) = trace.chosen_mode {
            let entry = stats.entry(problem.difficulty).or_default();
            entry.valid += 1;
            if style == TraceStyle::Draft {
                entry.draft += 1;
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Dims, StopReason};
    use crate::taskgen::{generate_problems, SplitName, DEFAULT_MAX_INTERMEDIATE};

    fn vocab() -> &'static Vocabulary {
        Vocabulary::standard()
    }

    fn trace_with_first(symbol: &str) -> Trace {
        let mut text = String::from(symbol);
        text.push_str("1+1=2");
        Trace {
            mode: PromptMode::Adaptive,
            prompt: vocab().build_prompt(PromptMode::Adaptive, &vocab().encode("1+1").unwrap()),
            tokens: vocab().encode(&text).unwrap(),
            logprobs: vec![],
            stop: StopReason::Length,
        }
    }

    #[test]
    fn digit_first_token_invalidates_the_choice() {
        let at = AdaptiveTrace::from_trace(vocab(), trace_with_first("3"));
        assert!(!at.choice_valid());
        assert_eq!(at.chosen_mode, None);
    }

    #[test]
    fn mode_tokens_are_decoded() {
        let d = AdaptiveTrace::from_trace(vocab(), trace_with_first("<DRAFT>"));
        assert_eq!(d.chosen_mode, Some(TraceStyle::Draft));
        let s = AdaptiveTrace::from_trace(vocab(), trace_with_first("<STEP>"));
        assert_eq!(s.chosen_mode, Some(TraceStyle::Step));
    }

    #[test]
    fn greedy_adaptive_decoding_is_deterministic() {
        let params = PolicyParams::init(Dims { vocab: vocab().size(), embed: 16, context: 64 }, 2);
        let q = vocab().encode("2+3-1").unwrap();
        let cfg = GenerationConfig::greedy(20);
        let a = sample_adaptive(&params, vocab(), &q, &cfg).unwrap();
        let b = sample_adaptive(&params, vocab(), &q, &cfg).unwrap();
        assert_eq!(a.trace.tokens, b.trace.tokens);
        assert_eq!(a.chosen_mode, b.chosen_mode);
    }

    #[test]
    fn stats_all_draft_and_empty() {
        let split =
            generate_problems(SplitName::Eval, 6, (1, 3), 4, DEFAULT_MAX_INTERMEDIATE).unwrap();
        let problems: Vec<&Problem> = split.problems.iter().collect();
        let traces: Vec<AdaptiveTrace> = problems
            .iter()
            .map(|_| AdaptiveTrace::from_trace(vocab(), trace_with_first("<DRAFT>")))
            .collect();
        let stats = mode_choice_stats(&traces, &problems).unwrap();
        for level in stats.values() {
            assert_eq!(level.fraction_draft(), Some(1.0));
        }
        assert!(mode_choice_stats(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn fractions_weighted_average_to_overall_rate() {
        let split =
            generate_problems(SplitName::Eval, 20, (1, 5), 6, DEFAULT_MAX_INTERMEDIATE).unwrap();
        let problems: Vec<&Problem> = split.problems.iter().collect();
        let traces: Vec<AdaptiveTrace> = (0..20)
            .map(|i| {
                let first = match i % 3 {
                    0 => "<DRAFT>",
                    1 => "<STEP>",
                    _ => "7", // invalid choice
                };
                AdaptiveTrace::from_trace(vocab(), trace_with_first(first))
            })
            .collect();
        let stats = mode_choice_stats(&traces, &problems).unwrap();
        let (mut draft, mut valid) = (0usize, 0usize);
        for level in stats.values() {
            let f = level.fraction_draft().unwrap_or(0.0);
            assert!((0.0..=1.0).contains(&f));
            draft += level.draft;
            valid += level.valid;
        }
        let overall_direct = traces
            .iter()
            .filter(|t| t.chosen_mode == Some(TraceStyle::Draft))
            .count() as f64
            / traces.iter().filter(|t| t.choice_valid()).count() as f64;
        assert!((draft as f64 / valid as f64 - overall_direct).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs_error() {
        let split = generate_problems(SplitName::Eval, 2, (1, 1), 4, 12).unwrap();
        let problems: Vec<&Problem> = split.problems.iter().collect();
        assert!(mode_choice_stats(&[], &problems).is_err());
    }
}
