//! Test-side oracles, written straight-line and independent of the library's
//! implementation paths.

#![allow(dead_code)]

use draftrl_core::policy::{ParamView, PolicyParams, N_HEADS, REL_WINDOW};

/// Independent left-to-right evaluator over the question *text*.
///
/// Grammar: `value (op value)*` with `value := digit+ | '(-' digit+ ')'`
/// and ops `+ - *`.
pub fn eval_chain_text(question: &str) -> Option<i64> {
    let bytes = question.as_bytes();
    let mut pos = 0usize;

    fn read_int(bytes: &[u8], pos: &mut usize) -> Option<i64> {
        let neg = bytes[*pos..].starts_with(b"(-");
        if neg {
            *pos += 2;
        }
        let start = *pos;
        let mut v: i64 = 0;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            v = v * 10 + (bytes[*pos] - b'0') as i64;
            *pos += 1;
        }
        if *pos == start {
            return None;
        }
        if neg {
            if *pos >= bytes.len() || bytes[*pos] != b')' {
                return None;
            }
            *pos += 1;
            return Some(-v);
        }
        Some(v)
    }

    let mut value = read_int(bytes, &mut pos)?;
    while pos < bytes.len() {
        let op = bytes[pos];
        pos += 1;
        let rhs = read_int(bytes, &mut pos)?;
        value = match op {
            b'+' => value + rhs,
            b'-' => value - rhs,
            b'*' => value * rhs,
            _ => return None,
        };
    }
    Some(value)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + 1e-6).sqrt()
}

fn norm(x: &[f64], g: &[f64]) -> Vec<f64> {
    let r = rms(x);
    x.iter().zip(g).map(|(xi, gi)| gi * xi / r).collect()
}

fn mat(w: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_dim];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..out_dim {
            y[j] += xi * w[i * out_dim + j];
        }
    }
    y
}

/// Naive forward pass: next-token log-probabilities at every position of
/// `input`, recomputed from scratch with plain nested loops.
pub fn naive_logprob_table(params: &PolicyParams, input: &[u16]) -> Vec<Vec<f64>> {
    let d = params.dims.embed;
    let h = params.hidden();
    let v = params.dims.vocab;
    let w: ParamView = params.view();
    let len = input.len();

    // embeddings and q/k/v for every position
    let mut embeds = Vec::with_capacity(len);
    let mut qs = Vec::with_capacity(len);
    let mut ks = Vec::with_capacity(len);
    let mut vs = Vec::with_capacity(len);
    for (t, &tok) in input.iter().enumerate() {
        let e: Vec<f64> = (0..d)
            .map(|i| w.tok_emb[tok as usize * d + i] + w.pos_emb[t * d + i])
            .collect();
        let a = norm(&e, w.ln1_g);
        qs.push(mat(w.wq, &a, d));
        ks.push(mat(w.wk, &a, d));
        vs.push(mat(w.wv, &a, d));
        embeds.push(e);
    }

    let mut table = Vec::with_capacity(len);
    for t in 0..len {
        // per-head softmax attention over the causal prefix, with the
        // clipped relative-distance bias
        let hd = d / N_HEADS;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = vec![0.0; d];
        for head in 0..N_HEADS {
            let off = head * hd;
            let scores: Vec<f64> = (0..=t)
                .map(|s| {
                    let dot: f64 = (0..hd).map(|i| qs[t][off + i] * ks[s][off + i]).sum();
                    let slot = (t - s).min(REL_WINDOW - 1);
                    dot * scale + w.rel_bias[head * REL_WINDOW + slot]
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (s, exp_s) in exps.iter().enumerate() {
                for i in 0..hd {
                    mixed[off + i] += exp_s / z * vs[s][off + i];
                }
            }
        }
        let attn = mat(w.wo, &mixed, d);
        let u: Vec<f64> = (0..d).map(|i| embeds[t][i] + attn[i]).collect();
        let m = norm(&u, w.ln2_g);
        let mut hid = mat(w.w1, &m, h);
        for (x, b) in hid.iter_mut().zip(w.b1) {
            *x = (*x + b).tanh();
        }
        let mut f = mat(w.w2, &hid, d);
        for i in 0..d {
            f[i] += w.b2[i] + u[i];
        }
        let zv = norm(&f, w.lnf_g);
        let mut logits = mat(w.unembed, &zv, v);
        for (l, b) in logits.iter_mut().zip(w.b_out) {
            *l += b;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        table.push(logits.iter().map(|x| x - lse).collect());
    }
    table
}
