//! Draft-style reasoning at desk scale: a synthetic verifiable arithmetic
//! task, a tiny autoregressive policy with exact gradients, draft distillation
//! (SFT), two-stage GRPO with incremental length expansion, three
//! prompt-conditioned inference modes, and the evaluation harness that
//! compares them.
//!
//! Modules map one-to-one onto the subsystems:
//! * [`codec`] — closed vocabulary, mode tokens, answer spans, step counting
//! * [`taskgen`] — arithmetic-chain problems and the oracle teacher
//! * [`policy`] — the model: log-probs, gradients, bounded sampling
//! * [`sft`] — filtered draft dataset and cross-entropy training
//! * [`grpo`] — group rollouts, advantages, clipped surrogate, updates
//! * [`curriculum`] — staged plan: sft -> rl1 -> rl2, plus ablations
//! * [`eval`] — pass@1, tokens, EFF, difficulty/length/phase analysis
//! * [`adaptive`] — the `<ADAPT>` mode-choice wrapper and its accounting

pub mod adaptive;
pub mod codec;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod optim;
pub mod policy;
pub mod report;
pub mod rng;
pub mod sft;
pub mod taskgen;

pub use codec::{PromptMode, TokenId, Vocabulary};
pub use error::{Error, Result};
pub use policy::{GenerationConfig, PolicyParams, StopReason, Trace};
pub use taskgen::{DatasetSplit, Problem, SplitName, TraceStyle};
