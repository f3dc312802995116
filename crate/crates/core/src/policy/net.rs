//! Forward and backward passes, written out by hand over the flat vector.
//!
//! Per position: token+position embedding, one pre-norm causal self-attention
//! block (single head) with residual, a pre-norm tanh MLP with residual, a
//! final RMSNorm, and an unembedding into vocabulary logits. All math is f64;
//! probability work happens in log space.

use crate::codec::TokenId;
use crate::error::{Error, Result};

use super::{Dims, PolicyParams, N_HEADS, REL_WINDOW};

pub(crate) const RMS_EPS: f64 = 1e-6;

fn rel_slot(t: usize, s: usize) -> usize {
    (t - s).min(REL_WINDOW - 1)
}

/// y[j] += sum_i x[i] * w[i*out+j]
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let o = out.len();
    debug_assert_eq!(w.len(), x.len() * o);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * o..(i + 1) * o];
        for (y, &wij) in out.iter_mut().zip(row) {
            *y += xi * wij;
        }
    }
}

/// dx[i] += sum_j w[i*out+j] * dy[j]
fn matvec_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let o = dy.len();
    for (i, dxi) in dx.iter_mut().enumerate() {
        let row = &w[i * o..(i + 1) * o];
        let mut acc = 0.0;
        for (&wij, &dyj) in row.iter().zip(dy) {
            acc += wij * dyj;
        }
        *dxi += acc;
    }
}

/// dw[i*out+j] += x[i] * dy[j]
fn outer_acc(dw: &mut [f64], x: &[f64], dy: &[f64]) {
    let o = dy.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mut dw[i * o..(i + 1) * o];
        for (d, &dyj) in row.iter_mut().zip(dy) {
            *d += xi * dyj;
        }
    }
}

const GEMM_TILE: usize = 8;

/// C[l][o] += A[l][i] * B[i][o], tiled over rows so B rows stay hot.
///
/// Each output row accumulates in ascending-i order — the same order as
/// `matvec_acc` — so a row computed here is bit-identical to the incremental
/// sampler's single-position path.
fn gemm_acc(a: &[f64], rows: usize, inner: usize, b: &[f64], out: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * out);
    debug_assert_eq!(c.len(), rows * out);
    for l0 in (0..rows).step_by(GEMM_TILE) {
        let l1 = (l0 + GEMM_TILE).min(rows);
        for i in 0..inner {
            let brow = &b[i * out..(i + 1) * out];
            for l in l0..l1 {
                let x = a[l * inner + i];
                if x == 0.0 {
                    continue;
                }
                let crow = &mut c[l * out..(l + 1) * out];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += x * bv;
                }
            }
        }
    }
}

/// dX[l][i] += sum_o dY[l][o] * B[i][o]  (i.e. dX += dY * B^T)
fn gemm_nt_acc(dy: &[f64], rows: usize, out: usize, b: &[f64], inner: usize, dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), rows * out);
    debug_assert_eq!(b.len(), inner * out);
    debug_assert_eq!(dx.len(), rows * inner);
    for l0 in (0..rows).step_by(GEMM_TILE) {
        let l1 = (l0 + GEMM_TILE).min(rows);
        for i in 0..inner {
            let brow = &b[i * out..(i + 1) * out];
            for l in l0..l1 {
                let dyrow = &dy[l * out..(l + 1) * out];
                let mut acc = 0.0;
                for (&dv, &bv) in dyrow.iter().zip(brow) {
                    acc += dv * bv;
                }
                dx[l * inner + i] += acc;
            }
        }
    }
}

/// dB[i][o] += sum_l A[l][i] * dY[l][o]  (i.e. dB += A^T * dY)
fn gemm_tn_acc(a: &[f64], rows: usize, inner: usize, dy: &[f64], out: usize, db: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(dy.len(), rows * out);
    debug_assert_eq!(db.len(), inner * out);
    for l0 in (0..rows).step_by(GEMM_TILE) {
        let l1 = (l0 + GEMM_TILE).min(rows);
        for i in 0..inner {
            let dbrow = &mut db[i * out..(i + 1) * out];
            for l in l0..l1 {
                let x = a[l * inner + i];
                if x == 0.0 {
                    continue;
                }
                let dyrow = &dy[l * out..(l + 1) * out];
                for (dbv, &dv) in dbrow.iter_mut().zip(dyrow) {
                    *dbv += x * dv;
                }
            }
        }
    }
}

fn rms_inv(x: &[f64]) -> f64 {
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    1.0 / (mean_sq + RMS_EPS).sqrt()
}

fn rmsnorm(x: &[f64], g: &[f64], inv_r: f64, out: &mut [f64]) {
    for ((y, &xi), &gi) in out.iter_mut().zip(x).zip(g) {
        *y = gi * xi * inv_r;
    }
}

/// Backward through `y = g .* x * inv_r`; accumulates into `dx` and `dg`.
fn rmsnorm_backward(x: &[f64], g: &[f64], inv_r: f64, dy: &[f64], dx: &mut [f64], dg: &mut [f64]) {
    let n = x.len() as f64;
    let mut c = 0.0;
    for i in 0..x.len() {
        c += dy[i] * g[i] * x[i];
    }
    let k = c * inv_r * inv_r * inv_r / n;
    for i in 0..x.len() {
        dx[i] += g[i] * dy[i] * inv_r - x[i] * k;
        dg[i] += dy[i] * x[i] * inv_r;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter() {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

fn tri_offset(t: usize) -> usize {
    t * (t + 1) / 2
}

/// Activations for a full teacher-forced pass. Rows are position-major.
pub(crate) struct Cache {
    pub len: usize,
    pub e: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub mix: Vec<f64>,
    pub u: Vec<f64>,
    pub m: Vec<f64>,
    pub hmid: Vec<f64>,
    pub f: Vec<f64>,
    pub z: Vec<f64>,
    pub inv1: Vec<f64>,
    pub inv2: Vec<f64>,
    pub invf: Vec<f64>,
    /// Lower-triangular attention rows, packed per head; head h's row t
    /// starts at h*tri(len) + t*(t+1)/2.
    pub probs: Vec<f64>,
}

impl Cache {
    fn prob_index(&self, head: usize, t: usize, s: usize) -> usize {
        head * tri_offset(self.len) + tri_offset(t) + s
    }
}

pub(crate) fn forward_cache(params: &PolicyParams, tokens: &[TokenId]) -> Result<Cache> {
    let Dims { vocab, embed: d, context } = params.dims;
    let len = tokens.len();
    if len == 0 {
        return Err(Error::integrity("forward pass needs at least one token"));
    }
    if len > context {
        return Err(Error::ContextOverflow { len, max: context });
    }
    if d % N_HEADS != 0 {
        return Err(Error::integrity(format!("embed dim {d} not divisible by {N_HEADS} heads")));
    }
    let h = params.hidden();
    let hd = d / N_HEADS;
    let w = params.view();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut c = Cache {
        len,
        e: vec![0.0; len * d],
        a: vec![0.0; len * d],
        q: vec![0.0; len * d],
        k: vec![0.0; len * d],
        v: vec![0.0; len * d],
        mix: vec![0.0; len * d],
        u: vec![0.0; len * d],
        m: vec![0.0; len * d],
        hmid: vec![0.0; len * h],
        f: vec![0.0; len * d],
        z: vec![0.0; len * d],
        inv1: vec![0.0; len],
        inv2: vec![0.0; len],
        invf: vec![0.0; len],
        probs: vec![0.0; N_HEADS * tri_offset(len)],
    };

    // embeddings and first norm, position by position
    for t in 0..len {
        let tok = tokens[t] as usize;
        if tok >= vocab {
            return Err(Error::BadTokenId(tokens[t] as u32));
        }
        let span = t * d..(t + 1) * d;
        for i in 0..d {
            c.e[t * d + i] = w.tok_emb[tok * d + i] + w.pos_emb[t * d + i];
        }
        c.inv1[t] = rms_inv(&c.e[span.clone()]);
        rmsnorm(&c.e[span.clone()], w.ln1_g, c.inv1[t], &mut c.a[span.clone()]);
    }

    // projections as whole-sequence matrix products
    gemm_acc(&c.a, len, d, w.wq, d, &mut c.q);
    gemm_acc(&c.a, len, d, w.wk, d, &mut c.k);
    gemm_acc(&c.a, len, d, w.wv, d, &mut c.v);

    // causal attention per row and head, with the relative-distance bias
    for t in 0..len {
        for head in 0..N_HEADS {
            let off = head * hd;
            let base = c.prob_index(head, t, 0);
            for s in 0..=t {
                let mut dot = 0.0;
                for i in 0..hd {
                    dot += c.q[t * d + off + i] * c.k[s * d + off + i];
                }
                c.probs[base + s] = dot * scale + w.rel_bias[head * REL_WINDOW + rel_slot(t, s)];
            }
            let row = &mut c.probs[base..base + t + 1];
            log_softmax_in_place(row);
            for r in row.iter_mut() {
                *r = r.exp();
            }
            for s in 0..=t {
                let p = c.probs[base + s];
                for i in 0..hd {
                    c.mix[t * d + off + i] += p * c.v[s * d + off + i];
                }
            }
        }
    }

    // output projection, residual, MLP, final norm
    gemm_acc(&c.mix, len, d, w.wo, d, &mut c.u);
    for t in 0..len {
        let span = t * d..(t + 1) * d;
        for i in 0..d {
            c.u[t * d + i] += c.e[t * d + i];
        }
        c.inv2[t] = rms_inv(&c.u[span.clone()]);
        rmsnorm(&c.u[span.clone()], w.ln2_g, c.inv2[t], &mut c.m[span]);
        c.hmid[t * h..(t + 1) * h].copy_from_slice(w.b1);
    }
    gemm_acc(&c.m, len, d, w.w1, h, &mut c.hmid);
    for x in c.hmid.iter_mut() {
        *x = x.tanh();
    }
    for t in 0..len {
        c.f[t * d..(t + 1) * d].copy_from_slice(w.b2);
    }
    gemm_acc(&c.hmid, len, h, w.w2, d, &mut c.f);
    for t in 0..len {
        let span = t * d..(t + 1) * d;
        for i in 0..d {
            c.f[t * d + i] += c.u[t * d + i];
        }
        c.invf[t] = rms_inv(&c.f[span.clone()]);
        rmsnorm(&c.f[span.clone()], w.lnf_g, c.invf[t], &mut c.z[span]);
    }
    Ok(c)
}

/// Raw logits for row `t` (predicting the token at position `t+1`).
pub(crate) fn row_logits(params: &PolicyParams, cache: &Cache, t: usize) -> Vec<f64> {
    let d = params.dims.embed;
    let w = params.view();
    let mut logits = w.b_out.to_vec();
    matvec_acc(w.unembed, &cache.z[t * d..(t + 1) * d], &mut logits);
    logits
}

/// Log-softmax row `t`.
pub(crate) fn row_log_softmax(params: &PolicyParams, cache: &Cache, t: usize) -> Vec<f64> {
    let mut row = row_logits(params, cache, t);
    log_softmax_in_place(&mut row);
    row
}

/// Accumulate `d/dtheta sum_r w_r * log P(y_r | prefix)` into `grad`.
///
/// `weights` entries are `(row, predicted_token, weight)`; row `t` scores a
/// candidate token at position `t+1`, which need not appear in `tokens`.
pub(crate) fn backward_weighted(
    params: &PolicyParams,
    tokens: &[TokenId],
    cache: &Cache,
    weights: &[(usize, TokenId, f64)],
    grad: &mut [f64],
) -> Result<()> {
    let Dims { vocab, embed: d, .. } = params.dims;
    let h = params.hidden();
    let hd = d / N_HEADS;
    let len = cache.len;
    let w = params.view();
    let layout = params.layout();
    let scale = 1.0 / (hd as f64).sqrt();

    if grad.len() != params.flat.len() {
        return Err(Error::integrity("gradient buffer length mismatch"));
    }

    let mut dz = vec![0.0; len * d];
    for &(t, target, weight) in weights {
        if t >= len {
            return Err(Error::integrity(format!("weighted row {t} out of range 0..{len}")));
        }
        if (target as usize) >= vocab {
            return Err(Error::BadTokenId(target as u32));
        }
        if weight == 0.0 {
            continue;
        }
        let mut dlogit = row_logits(params, cache, t);
        log_softmax_in_place(&mut dlogit);
        for (j, x) in dlogit.iter_mut().enumerate() {
            let p = x.exp();
            *x = weight * ((j == target as usize) as u8 as f64 - p);
        }
        let z_t = &cache.z[t * d..(t + 1) * d];
        for (g, &dl) in grad[layout.b_out.clone()].iter_mut().zip(&dlogit) {
            *g += dl;
        }
        outer_acc(&mut grad[layout.unembed.clone()], z_t, &dlogit);
        matvec_t_acc(w.unembed, &dlogit, &mut dz[t * d..(t + 1) * d]);
    }

    // Even rows without direct signal feed later rows through their keys and
    // values, so the block backward runs over every position. All per-matrix
    // work happens as whole-sequence products.
    let mut df = vec![0.0; len * d];
    for t in 0..len {
        let span = t * d..(t + 1) * d;
        rmsnorm_backward(
            &cache.f[span.clone()],
            w.lnf_g,
            cache.invf[t],
            &dz[span.clone()],
            &mut df[span],
            &mut grad[layout.lnf_g.clone()],
        );
    }
    // f = u + W2*tanh(W1*m + b1) + b2
    let mut du = df.clone();
    {
        let db2 = &mut grad[layout.b2.clone()];
        for t in 0..len {
            for i in 0..d {
                db2[i] += df[t * d + i];
            }
        }
    }
    gemm_tn_acc(&cache.hmid, len, h, &df, d, &mut grad[layout.w2.clone()]);
    let mut dpre = vec![0.0; len * h];
    gemm_nt_acc(&df, len, d, w.w2, h, &mut dpre);
    for (x, &hv) in dpre.iter_mut().zip(cache.hmid.iter()) {
        *x *= 1.0 - hv * hv;
    }
    {
        let db1 = &mut grad[layout.b1.clone()];
        for t in 0..len {
            for i in 0..h {
                db1[i] += dpre[t * h + i];
            }
        }
    }
    gemm_tn_acc(&cache.m, len, d, &dpre, h, &mut grad[layout.w1.clone()]);
    let mut dm = vec![0.0; len * d];
    gemm_nt_acc(&dpre, len, h, w.w1, d, &mut dm);
    drop(dpre);
    for t in 0..len {
        let span = t * d..(t + 1) * d;
        rmsnorm_backward(
            &cache.u[span.clone()],
            w.ln2_g,
            cache.inv2[t],
            &dm[span.clone()],
            &mut du[span],
            &mut grad[layout.ln2_g.clone()],
        );
    }
    // u = e + Wo*mix
    let mut de = du.clone();
    gemm_tn_acc(&cache.mix, len, d, &du, d, &mut grad[layout.wo.clone()]);
    let mut dmix = vec![0.0; len * d];
    gemm_nt_acc(&du, len, d, w.wo, d, &mut dmix);
    drop(du);

    // attention backward: couples each row t to all s <= t, per head
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    let mut dp = vec![0.0; len];
    for t in 0..len {
        let dmix_t = &dmix[t * d..(t + 1) * d];
        if dmix_t.iter().all(|&x| x == 0.0) {
            continue;
        }
        for head in 0..N_HEADS {
            let off = head * hd;
            let base = cache.prob_index(head, t, 0);
            let row = &cache.probs[base..base + t + 1];
            let mut row_dot = 0.0;
            for s in 0..=t {
                let mut acc = 0.0;
                for i in 0..hd {
                    acc += dmix_t[off + i] * cache.v[s * d + off + i];
                }
                dp[s] = acc;
                row_dot += row[s] * acc;
                for i in 0..hd {
                    dv[s * d + off + i] += row[s] * dmix_t[off + i];
                }
            }
            for s in 0..=t {
                let dscore = row[s] * (dp[s] - row_dot);
                if dscore == 0.0 {
                    continue;
                }
                grad[layout.rel_bias.start + head * REL_WINDOW + rel_slot(t, s)] += dscore;
                for i in 0..hd {
                    dq[t * d + off + i] += dscore * scale * cache.k[s * d + off + i];
                    dk[s * d + off + i] += dscore * scale * cache.q[t * d + off + i];
                }
            }
        }
    }

    // projections and first norm
    gemm_tn_acc(&cache.a, len, d, &dq, d, &mut grad[layout.wq.clone()]);
    gemm_tn_acc(&cache.a, len, d, &dk, d, &mut grad[layout.wk.clone()]);
    gemm_tn_acc(&cache.a, len, d, &dv, d, &mut grad[layout.wv.clone()]);
    let mut da = vec![0.0; len * d];
    gemm_nt_acc(&dq, len, d, w.wq, d, &mut da);
    gemm_nt_acc(&dk, len, d, w.wk, d, &mut da);
    gemm_nt_acc(&dv, len, d, w.wv, d, &mut da);
    for t in 0..len {
        let span = t * d..(t + 1) * d;
        rmsnorm_backward(
            &cache.e[span.clone()],
            w.ln1_g,
            cache.inv1[t],
            &da[span.clone()],
            &mut de[span],
            &mut grad[layout.ln1_g.clone()],
        );
        let tok = tokens[t] as usize;
        for i in 0..d {
            grad[layout.tok_emb.start + tok * d + i] += de[t * d + i];
            grad[layout.pos_emb.start + t * d + i] += de[t * d + i];
        }
    }
    Ok(())
}

/// Incremental generation state: keys/values of the prefix plus the running
/// position. Appending a token computes only that position's activations —
/// the math is identical to a full forward pass over the extended sequence,
/// which the test suite checks against the full-recompute path.
pub(crate) struct GenState {
    pos: usize,
    ks: Vec<f64>,
    vs: Vec<f64>,
}

impl GenState {
    pub fn new(params: &PolicyParams) -> Self {
        let d = params.dims.embed;
        GenState { pos: 0, ks: Vec::with_capacity(64 * d), vs: Vec::with_capacity(64 * d) }
    }

    /// Feed one token; returns the logits row predicting the next token.
    pub fn advance(&mut self, params: &PolicyParams, token: TokenId) -> Result<Vec<f64>> {
        let Dims { vocab, embed: d, context } = params.dims;
        if self.pos >= context {
            return Err(Error::ContextOverflow { len: self.pos + 1, max: context });
        }
        let tok = token as usize;
        if tok >= vocab {
            return Err(Error::BadTokenId(token as u32));
        }
        let w = params.view();
        let t = self.pos;
        let hd = d / N_HEADS;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut e = vec![0.0; d];
        for i in 0..d {
            e[i] = w.tok_emb[tok * d + i] + w.pos_emb[t * d + i];
        }
        let inv1 = rms_inv(&e);
        let mut a = vec![0.0; d];
        rmsnorm(&e, w.ln1_g, inv1, &mut a);
        let mut q = vec![0.0; d];
        let mut k = vec![0.0; d];
        let mut v = vec![0.0; d];
        matvec_acc(w.wq, &a, &mut q);
        matvec_acc(w.wk, &a, &mut k);
        matvec_acc(w.wv, &a, &mut v);
        self.ks.extend_from_slice(&k);
        self.vs.extend_from_slice(&v);

        let mut mix = vec![0.0; d];
        let mut scores = vec![0.0; t + 1];
        for head in 0..N_HEADS {
            let off = head * hd;
            for (s, sc) in scores.iter_mut().enumerate() {
                let k_s = &self.ks[s * d + off..s * d + off + hd];
                let mut dot = 0.0;
                for i in 0..hd {
                    dot += q[off + i] * k_s[i];
                }
                *sc = dot * scale + w.rel_bias[head * REL_WINDOW + rel_slot(t, s)];
            }
            log_softmax_in_place(&mut scores[..t + 1]);
            for s in 0..=t {
                let p = scores[s].exp();
                let v_s = &self.vs[s * d + off..s * d + off + hd];
                for i in 0..hd {
                    mix[off + i] += p * v_s[i];
                }
            }
        }
        // Same summation order as forward_cache, so stored log-probs match
        // a full-recompute bit for bit.
        let mut u = vec![0.0; d];
        matvec_acc(w.wo, &mix, &mut u);
        for i in 0..d {
            u[i] += e[i];
        }
        let inv2 = rms_inv(&u);
        let mut m = vec![0.0; d];
        rmsnorm(&u, w.ln2_g, inv2, &mut m);
        let mut hmid = w.b1.to_vec();
        matvec_acc(w.w1, &m, &mut hmid);
        for x in hmid.iter_mut() {
            *x = x.tanh();
        }
        let mut f = w.b2.to_vec();
        matvec_acc(w.w2, &hmid, &mut f);
        for i in 0..d {
            f[i] += u[i];
        }
        let invf = rms_inv(&f);
        let mut z = vec![0.0; d];
        rmsnorm(&f, w.lnf_g, invf, &mut z);
        let mut logits = w.b_out.to_vec();
        matvec_acc(w.unembed, &z, &mut logits);

        self.pos += 1;
        Ok(logits)
    }
}
