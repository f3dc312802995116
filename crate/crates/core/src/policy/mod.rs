//! Tiny autoregressive policy: exact log-probabilities, exact gradients, and
//! bounded-length sampling.
//!
//! The model is a single causal self-attention block over learned token and
//! position embeddings, with a tanh MLP and RMSNorms, unembedded into logits
//! over the closed vocabulary. Parameters live in one flat `f64` vector whose
//! length is a pure function of the dimensions; checkpoints store the same
//! vector as little-endian `f32`.
//!
//! # Phase discipline
//!
//! Parameters are read-shared during rollout and single-writer during
//! updates. The API encodes this in the borrow system: sampling and scoring
//! take `&PolicyParams` (any number of concurrent readers hold an immutable
//! snapshot), while optimizer steps take `&mut PolicyParams` and therefore
//! exclude all readers for the duration of the update.

mod checkpoint;
pub(crate) mod net;
mod sample;

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{PromptMode, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::rng_from;

pub use checkpoint::{load_checkpoint, quantize_to_f32, save_checkpoint, CHECKPOINT_VERSION};
pub use sample::{sample, GenerationConfig, StopReason, Trace};

/// MLP hidden width as a multiple of the embedding width.
pub const HIDDEN_MULT: usize = 4;

/// Attention heads in the single block.
pub const N_HEADS: usize = 4;

/// Relative-distance window for the learned attention bias; distances at or
/// beyond the window share its last slot.
pub const REL_WINDOW: usize = 64;

/// Standard deviation for Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub context: usize,
}

/// Flat parameter count implied by the dimensions.
pub fn param_count(dims: &Dims) -> usize {
    let (v, d, t) = (dims.vocab, dims.embed, dims.context);
    let h = HIDDEN_MULT * d;
    v * d          // token embeddings
        + t * d    // position embeddings
        + d        // ln1 gain
        + 4 * d * d // wq, wk, wv, wo
        + N_HEADS * REL_WINDOW // relative attention bias per head
        + d        // ln2 gain
        + d * h + h // w1, b1
        + h * d + d // w2, b2
        + d        // final norm gain
        + d * v + v // unembedding, output bias
}

/// Ranges of each parameter group inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub ln1_g: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub rel_bias: Range<usize>,
    pub ln2_g: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub lnf_g: Range<usize>,
    pub unembed: Range<usize>,
    pub b_out: Range<usize>,
}

impl Layout {
    fn new(dims: &Dims) -> Layout {
        let (v, d, t) = (dims.vocab, dims.embed, dims.context);
        let h = HIDDEN_MULT * d;
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        Layout {
            tok_emb: take(v * d),
            pos_emb: take(t * d),
            ln1_g: take(d),
            wq: take(d * d),
            wk: take(d * d),
            wv: take(d * d),
            wo: take(d * d),
            rel_bias: take(N_HEADS * REL_WINDOW),
            ln2_g: take(d),
            w1: take(d * h),
            b1: take(h),
            w2: take(h * d),
            b2: take(d),
            lnf_g: take(d),
            unembed: take(d * v),
            b_out: take(v),
        }
    }
}

/// Named immutable slices over the flat vector. Matrices are row-major
/// `[input][output]`.
pub struct ParamView<'a> {
    pub tok_emb: &'a [f64],
    pub pos_emb: &'a [f64],
    pub ln1_g: &'a [f64],
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    /// Relative attention bias, head-major: `[head][clipped distance]`.
    pub rel_bias: &'a [f64],
    pub ln2_g: &'a [f64],
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub lnf_g: &'a [f64],
    pub unembed: &'a [f64],
    pub b_out: &'a [f64],
}

/// The policy's flat parameter vector plus its dimensions.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub dims: Dims,
    pub flat: Vec<f64>,
    pub version: u32,
}

impl PolicyParams {
    /// Gaussian(0, 0.02) weights, zero biases, unit norm gains.
    pub fn init(dims: Dims, seed: u64) -> PolicyParams {
        let mut params = PolicyParams::zeros(dims);
        let layout = params.layout();
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for range in [
            layout.tok_emb.clone(),
            layout.pos_emb.clone(),
            layout.wq.clone(),
            layout.wk.clone(),
            layout.wv.clone(),
            layout.wo.clone(),
            layout.w1.clone(),
            layout.w2.clone(),
            layout.unembed.clone(),
        ] {
            for x in params.flat[range].iter_mut() {
                *x = normal.sample(&mut rng);
            }
        }
        for range in [layout.ln1_g, layout.ln2_g, layout.lnf_g] {
            for x in params.flat[range].iter_mut() {
                *x = 1.0;
            }
        }
        params
    }

    pub fn zeros(dims: Dims) -> PolicyParams {
        PolicyParams { dims, flat: vec![0.0; param_count(&dims)], version: CHECKPOINT_VERSION }
    }

    pub fn hidden(&self) -> usize {
        HIDDEN_MULT * self.dims.embed
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    pub fn view(&self) -> ParamView<'_> {
        let l = self.layout();
        let f = &self.flat;
        ParamView {
            tok_emb: &f[l.tok_emb],
            pos_emb: &f[l.pos_emb],
            ln1_g: &f[l.ln1_g],
            wq: &f[l.wq],
            wk: &f[l.wk],
            wv: &f[l.wv],
            wo: &f[l.wo],
            rel_bias: &f[l.rel_bias],
            ln2_g: &f[l.ln2_g],
            w1: &f[l.w1],
            b1: &f[l.b1],
            w2: &f[l.w2],
            b2: &f[l.b2],
            lnf_g: &f[l.lnf_g],
            unembed: &f[l.unembed],
            b_out: &f[l.b_out],
        }
    }

    /// Every entry must stay finite after every update.
    pub fn assert_finite(&self) -> Result<()> {
        match self.flat.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                what: "parameter".to_string(),
                diagnostics: format!("flat index {i} = {}", self.flat[i]),
            }),
        }
    }
}

/// Full input sequence for a mode-conditioned context: `<BOS> <mode> context`.
fn conditioned_input(vocab: &Vocabulary, mode: PromptMode, context: &[TokenId]) -> Vec<TokenId> {
    let mut input = Vec::with_capacity(context.len() + 2);
    input.push(vocab.specials().bos);
    input.push(vocab.mode_token(mode));
    input.extend_from_slice(context);
    input
}

/// Per-position next-token log-probability table for `<BOS> <mode> context`.
///
/// Row `t` is the log-distribution over the token at position `t+1`; every
/// row log-sum-exps to zero.
pub fn logprobs(
    params: &PolicyParams,
    vocab: &Vocabulary,
    mode: PromptMode,
    context: &[TokenId],
) -> Result<Vec<Vec<f64>>> {
    let input = conditioned_input(vocab, mode, context);
    let cache = net::forward_cache(params, &input)?;
    Ok((0..input.len()).map(|t| net::row_log_softmax(params, &cache, t)).collect())
}

/// Exact gradient of `log P(target | <BOS> <mode> context)` w.r.t. the flat
/// parameter vector.
pub fn grad_logprob(
    params: &PolicyParams,
    vocab: &Vocabulary,
    mode: PromptMode,
    context: &[TokenId],
    target: TokenId,
) -> Result<Vec<f64>> {
    let input = conditioned_input(vocab, mode, context);
    let cache = net::forward_cache(params, &input)?;
    let mut grad = vec![0.0; params.flat.len()];
    net::backward_weighted(params, &input, &cache, &[(input.len() - 1, target, 1.0)], &mut grad)?;
    Ok(grad)
}

/// Value of `log P(target | <BOS> <mode> context)`.
pub fn logprob_of(
    params: &PolicyParams,
    vocab: &Vocabulary,
    mode: PromptMode,
    context: &[TokenId],
    target: TokenId,
) -> Result<f64> {
    let input = conditioned_input(vocab, mode, context);
    let cache = net::forward_cache(params, &input)?;
    let row = net::row_log_softmax(params, &cache, input.len() - 1);
    row.get(target as usize).copied().ok_or(Error::BadTokenId(target as u32))
}
