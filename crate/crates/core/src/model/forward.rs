//! Batched forward pass with enough cached activations for an exact
//! backward. All windows of a batch are flattened to `R = b*t` rows so the
//! projections run as a handful of medium-sized GEMMs.

use super::{ModelConfig, ModelError, Parameters, RMS_EPS, ROPE_BASE};
use crate::corpus::TokenId;
use crate::tensor::Scalar;

/// Cached intermediates of one forward pass.
#[derive(Debug)]
pub struct ForwardTrace<T: Scalar> {
    pub b: usize,
    pub t: usize,
    pub tokens: Vec<TokenId>,
    /// Residual stream at layer boundaries: `xs[0]` is the embedding output.
    pub xs: Vec<Vec<T>>,
    pub attn_normed: Vec<Vec<T>>,
    pub attn_inv: Vec<Vec<T>>,
    pub q: Vec<Vec<T>>,
    pub k: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub probs: Vec<Vec<T>>,
    pub ctx: Vec<Vec<T>>,
    pub x_mid: Vec<Vec<T>>,
    pub mlp_normed: Vec<Vec<T>>,
    pub mlp_inv: Vec<Vec<T>>,
    pub gate_pre: Vec<Vec<T>>,
    pub up: Vec<Vec<T>>,
    pub act: Vec<Vec<T>>,
    pub final_normed: Vec<T>,
    pub final_inv: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn rows(&self) -> usize {
        self.b * self.t
    }

    pub fn logit_row(&self, r: usize) -> &[T] {
        let v = self.logits.len() / self.rows();
        &self.logits[r * v..(r + 1) * v]
    }
}

/// Rotary cos/sin tables for positions `0..t`, laid out `[t][hd/2]`.
pub(super) struct RopeTable<T> {
    pub cos: Vec<T>,
    pub sin: Vec<T>,
    pub half: usize,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(t: usize, head_dim: usize) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(t * half);
        let mut sin = Vec::with_capacity(t * half);
        for p in 0..t {
            for j in 0..half {
                let theta = p as f64 * ROPE_BASE.powf(-2.0 * j as f64 / head_dim as f64);
                cos.push(T::from_f64(theta.cos()));
                sin.push(T::from_f64(theta.sin()));
            }
        }
        RopeTable { cos, sin, half }
    }

    /// Rotate adjacent pairs of every head slice in `row` for position `pos`.
    pub fn apply(&self, row: &mut [T], pos: usize, n_heads: usize, head_dim: usize) {
        let base = pos * self.half;
        for h in 0..n_heads {
            let s = h * head_dim;
            for j in 0..self.half {
                let (c, sn) = (self.cos[base + j], self.sin[base + j]);
                let x0 = row[s + 2 * j];
                let x1 = row[s + 2 * j + 1];
                row[s + 2 * j] = x0 * c - x1 * sn;
                row[s + 2 * j + 1] = x0 * sn + x1 * c;
            }
        }
    }

    /// Inverse rotation (transpose of `apply`); used by the backward pass.
    pub fn apply_inverse(&self, row: &mut [T], pos: usize, n_heads: usize, head_dim: usize) {
        let base = pos * self.half;
        for h in 0..n_heads {
            let s = h * head_dim;
            for j in 0..self.half {
                let (c, sn) = (self.cos[base + j], self.sin[base + j]);
                let x0 = row[s + 2 * j];
                let x1 = row[s + 2 * j + 1];
                row[s + 2 * j] = x0 * c + x1 * sn;
                row[s + 2 * j + 1] = x1 * c - x0 * sn;
            }
        }
    }
}

/// y = x * gain / rms(x) per row; also returns 1/rms for the backward.
pub(super) fn rmsnorm_rows<T: Scalar>(
    x: &[T],
    gain: &[T],
    d: usize,
    out: &mut [T],
    inv: &mut [T],
) {
    let rows = x.len() / d;
    let eps = T::from_f64(RMS_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mut ms = T::ZERO;
        for v in xr {
            ms = ms + *v * *v;
        }
        let iv = (ms * inv_d + eps).sqrt().recip();
        inv[r] = iv;
        let or = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            or[i] = xr[i] * iv * gain[i];
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mut m = f64::NEG_INFINITY;
    for v in row.iter() {
        m = m.max(v.as_f64());
    }
    let mut s = 0.0f64;
    for v in row.iter_mut() {
        let e = (v.as_f64() - m).exp();
        *v = T::from_f64(e);
        s += e;
    }
    for v in row.iter_mut() {
        *v = T::from_f64(v.as_f64() / s);
    }
}

/// Negative log-likelihood of `target` under softmax(row), in f64 nats.
pub fn row_nll<T: Scalar>(row: &[T], target: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for v in row {
        m = m.max(v.as_f64());
    }
    let mut s = 0.0f64;
    for v in row {
        s += (v.as_f64() - m).exp();
    }
    m + s.ln() - row[target].as_f64()
}

/// Causal forward over `b` windows of `t` tokens each (`tokens.len() == b*t`).
/// Logits at position `p` of a window depend only on tokens `0..=p` of that
/// window.
#[allow(clippy::needless_range_loop)] // the index addresses several buffers at once
pub fn forward<T: Scalar>(
    params: &Parameters<T>,
    tokens: &[TokenId],
    b: usize,
    t: usize,
) -> Result<ForwardTrace<T>, ModelError> {
    let cfg: &ModelConfig = &params.config;
    if t > cfg.context_len {
        return Err(ModelError::WindowTooLong { len: t, ctx: cfg.context_len });
    }
    assert_eq!(tokens.len(), b * t, "token buffer must be b*t");
    if let Some(&id) = tokens.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(ModelError::BadToken { id, vocab: cfg.vocab_size });
    }

    let layout = params.layout();
    let (d, kv_dim, f, v) = (layout.d, layout.kv_dim, layout.d_ff, layout.vocab);
    let (n_layers, n_heads, n_kv) = (cfg.n_layers, cfg.n_heads, cfg.n_kv_heads);
    let hd = cfg.head_dim();
    let group = n_heads / n_kv;
    let rows = b * t;
    let rope = RopeTable::<T>::new(t, hd);
    let inv_sqrt_hd = 1.0 / (hd as f64).sqrt();

    let mut trace = ForwardTrace {
        b,
        t,
        tokens: tokens.to_vec(),
        xs: vec![vec![T::ZERO; rows * d]; n_layers + 1],
        attn_normed: vec![vec![T::ZERO; rows * d]; n_layers],
        attn_inv: vec![vec![T::ZERO; rows]; n_layers],
        q: vec![vec![T::ZERO; rows * d]; n_layers],
        k: vec![vec![T::ZERO; rows * kv_dim]; n_layers],
        v: vec![vec![T::ZERO; rows * kv_dim]; n_layers],
        probs: vec![vec![T::ZERO; b * n_heads * t * t]; n_layers],
        ctx: vec![vec![T::ZERO; rows * d]; n_layers],
        x_mid: vec![vec![T::ZERO; rows * d]; n_layers],
        mlp_normed: vec![vec![T::ZERO; rows * d]; n_layers],
        mlp_inv: vec![vec![T::ZERO; rows]; n_layers],
        gate_pre: vec![vec![T::ZERO; rows * f]; n_layers],
        up: vec![vec![T::ZERO; rows * f]; n_layers],
        act: vec![vec![T::ZERO; rows * f]; n_layers],
        final_normed: vec![T::ZERO; rows * d],
        final_inv: vec![T::ZERO; rows],
        logits: vec![T::ZERO; rows * v],
    };

    // token embeddings
    let embed = params.seg(layout.tok_embed());
    for r in 0..rows {
        let tok = tokens[r] as usize;
        trace.xs[0][r * d..(r + 1) * d].copy_from_slice(&embed[tok * d..(tok + 1) * d]);
    }

    for l in 0..n_layers {
        let (x_in, x_rest) = trace.xs.split_at_mut(l + 1);
        let x_in = &x_in[l];
        let x_out = &mut x_rest[0];

        rmsnorm_rows(
            x_in,
            params.seg(layout.attn_norm(l)),
            d,
            &mut trace.attn_normed[l],
            &mut trace.attn_inv[l],
        );

        T::gemm(rows, d, d, &trace.attn_normed[l], params.seg(layout.wq(l)), T::ZERO, &mut trace.q[l]);
        T::gemm(rows, d, kv_dim, &trace.attn_normed[l], params.seg(layout.wk(l)), T::ZERO, &mut trace.k[l]);
        T::gemm(rows, d, kv_dim, &trace.attn_normed[l], params.seg(layout.wv(l)), T::ZERO, &mut trace.v[l]);

        for r in 0..rows {
            let pos = r % t;
            rope.apply(&mut trace.q[l][r * d..(r + 1) * d], pos, n_heads, hd);
            rope.apply(&mut trace.k[l][r * kv_dim..(r + 1) * kv_dim], pos, n_kv, hd);
        }

        // causal attention, head by head
        let q = &trace.q[l];
        let k = &trace.k[l];
        let vv = &trace.v[l];
        let probs = &mut trace.probs[l];
        let ctx = &mut trace.ctx[l];
        let scale = T::from_f64(inv_sqrt_hd);
        for bi in 0..b {
            for h in 0..n_heads {
                let g = h / group;
                for i in 0..t {
                    let ri = bi * t + i;
                    let qh = &q[ri * d + h * hd..ri * d + (h + 1) * hd];
                    let prow =
                        &mut probs[((bi * n_heads + h) * t + i) * t..((bi * n_heads + h) * t + i + 1) * t];
                    // scores for keys 0..=i
                    let mut m = T::neg_infinity();
                    for j in 0..=i {
                        let rj = bi * t + j;
                        let kh = &k[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        let mut s = T::ZERO;
                        for c in 0..hd {
                            s = s + qh[c] * kh[c];
                        }
                        let s = s * scale;
                        prow[j] = s;
                        m = m.max(s);
                    }
                    let mut z = T::ZERO;
                    for j in 0..=i {
                        let e = (prow[j] - m).exp();
                        prow[j] = e;
                        z = z + e;
                    }
                    let zr = z.recip();
                    let ctx_i = &mut ctx[ri * d + h * hd..ri * d + (h + 1) * hd];
                    for j in 0..=i {
                        let p = prow[j] * zr;
                        prow[j] = p;
                        let rj = bi * t + j;
                        let vh = &vv[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        for c in 0..hd {
                            ctx_i[c] = ctx_i[c] + p * vh[c];
                        }
                    }
                }
            }
        }

        // attn output projection + residual
        T::gemm(rows, d, d, &trace.ctx[l], params.seg(layout.wo(l)), T::ZERO, &mut trace.x_mid[l]);
        for (xm, xi) in trace.x_mid[l].iter_mut().zip(x_in.iter()) {
            *xm = *xm + *xi;
        }

        rmsnorm_rows(
            &trace.x_mid[l],
            params.seg(layout.mlp_norm(l)),
            d,
            &mut trace.mlp_normed[l],
            &mut trace.mlp_inv[l],
        );

        T::gemm(rows, d, f, &trace.mlp_normed[l], params.seg(layout.w_gate(l)), T::ZERO, &mut trace.gate_pre[l]);
        T::gemm(rows, d, f, &trace.mlp_normed[l], params.seg(layout.w_up(l)), T::ZERO, &mut trace.up[l]);
        for i in 0..rows * f {
            let z = trace.gate_pre[l][i];
            let sig = (T::ONE + (-z).exp()).recip();
            trace.act[l][i] = z * sig * trace.up[l][i];
        }
        T::gemm(rows, f, d, &trace.act[l], params.seg(layout.w_down(l)), T::ZERO, x_out);
        for (xo, xm) in x_out.iter_mut().zip(trace.x_mid[l].iter()) {
            *xo = *xo + *xm;
        }
    }

    rmsnorm_rows(
        &trace.xs[n_layers],
        params.seg(layout.final_norm()),
        d,
        &mut trace.final_normed,
        &mut trace.final_inv,
    );
    T::gemm(rows, d, v, &trace.final_normed, params.seg(layout.lm_head()), T::ZERO, &mut trace.logits);

    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 64,
            context_len: 16,
            vocab_size: 23,
        }
    }

    #[test]
    fn logits_shape_and_softmax_normalization() {
        let cfg = tiny_cfg();
        let p = init_params::<f32>(&cfg, 3);
        let tokens: Vec<u32> = (0..16).map(|i| (i * 7 % 23) as u32).collect();
        let tr = forward(&p, &tokens, 1, 16).unwrap();
        assert_eq!(tr.logits.len(), 16 * 23);
        for r in 0..16 {
            let mut row: Vec<f32> = tr.logit_row(r).to_vec();
            softmax_row(&mut row);
            let s: f64 = row.iter().map(|x| *x as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causality_changing_last_token_leaves_earlier_logits_bitwise() {
        let cfg = tiny_cfg();
        let p = init_params::<f32>(&cfg, 5);
        let mut tokens: Vec<u32> = (0..16).map(|i| (i * 5 % 23) as u32).collect();
        let a = forward(&p, &tokens, 1, 16).unwrap();
        tokens[15] = (tokens[15] + 1) % 23;
        let b = forward(&p, &tokens, 1, 16).unwrap();
        for r in 0..15 {
            assert_eq!(a.logit_row(r), b.logit_row(r), "row {r} changed");
        }
        assert_ne!(a.logit_row(15), b.logit_row(15));
    }

    #[test]
    fn rejects_out_of_range_token() {
        let cfg = tiny_cfg();
        let p = init_params::<f32>(&cfg, 5);
        let tokens = vec![0u32, 23, 1, 2];
        let err = forward(&p, &tokens, 1, 4).unwrap_err();
        assert!(matches!(err, ModelError::BadToken { id: 23, .. }));
    }

    #[test]
    fn rejects_window_longer_than_context() {
        let cfg = tiny_cfg();
        let p = init_params::<f32>(&cfg, 5);
        let tokens = vec![0u32; 17];
        assert!(matches!(
            forward(&p, &tokens, 1, 17),
            Err(ModelError::WindowTooLong { len: 17, ctx: 16 })
        ));
    }

    #[test]
    fn rope_inverse_undoes_rotation() {
        let rope = RopeTable::<f64>::new(8, 8);
        let mut row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        let orig = row.clone();
        rope.apply(&mut row, 5, 2, 8);
        rope.apply_inverse(&mut row, 5, 2, 8);
        for (a, b) in row.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_rows_match_single_window_rows() {
        let cfg = tiny_cfg();
        let p = init_params::<f64>(&cfg, 11);
        let w1: Vec<u32> = (0..16).map(|i| (i * 3 % 23) as u32).collect();
        let w2: Vec<u32> = (0..16).map(|i| (i * 11 % 23) as u32).collect();
        let mut both = w1.clone();
        both.extend_from_slice(&w2);
        let tb = forward(&p, &both, 2, 16).unwrap();
        let t1 = forward(&p, &w1, 1, 16).unwrap();
        let t2 = forward(&p, &w2, 1, 16).unwrap();
        for r in 0..16 {
            for c in 0..23 {
                assert!((tb.logit_row(r)[c] - t1.logit_row(r)[c]).abs() < 1e-12);
                assert!((tb.logit_row(16 + r)[c] - t2.logit_row(r)[c]).abs() < 1e-12);
            }
        }
    }
}
