//! Exact reverse-mode gradients of the mean next-token NLL.
//!
//! The pass mirrors `forward` step by step; every formula is checked
//! against central finite differences in f64 by the test suite.

use super::forward::{forward, row_nll, RopeTable};
use super::{ModelError, Parameters};
use crate::corpus::TokenId;
use crate::tensor::Scalar;

/// dgain and dx of `y = x * gain / rms(x)`, given upstream dy.
/// dx accumulates into `dx`; dgain accumulates into `dgain`.
fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    gain: &[T],
    inv: &[T],
    dy: &[T],
    d: usize,
    dx: &mut [T],
    dgain: &mut [T],
) {
    let rows = x.len() / d;
    let inv_d = T::from_f64(1.0 / d as f64);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let dxr = &mut dx[r * d..(r + 1) * d];
        let iv = inv[r];
        let mut dot = T::ZERO; // sum_j dy_j * g_j * x_j
        for i in 0..d {
            dot = dot + dyr[i] * gain[i] * xr[i];
            dgain[i] = dgain[i] + dyr[i] * xr[i] * iv;
        }
        let coef = dot * iv * iv * iv * inv_d;
        for i in 0..d {
            dxr[i] = dxr[i] + dyr[i] * gain[i] * iv - xr[i] * coef;
        }
    }
}

/// Mean next-token NLL over all predicted positions of the batch, plus the
/// exact gradient in `Parameters` layout. Positions `0..t-1` of each window
/// predict the following token; nothing crosses window boundaries.
pub fn loss_and_grad<T: Scalar>(
    params: &Parameters<T>,
    tokens: &[TokenId],
    b: usize,
    t: usize,
) -> Result<(f64, Vec<T>), ModelError> {
    assert!(b >= 1, "batch must be non-empty");
    assert!(t >= 2, "windows must hold at least two tokens");
    let trace = forward(params, tokens, b, t)?;
    let cfg = &params.config;
    let layout = params.layout();
    let (d, kv_dim, f, v) = (layout.d, layout.kv_dim, layout.d_ff, layout.vocab);
    let (n_layers, n_heads, n_kv) = (cfg.n_layers, cfg.n_heads, cfg.n_kv_heads);
    let hd = cfg.head_dim();
    let group = n_heads / n_kv;
    let rows = b * t;
    let n_pred = b * (t - 1);
    let inv_sqrt_hd = 1.0 / (hd as f64).sqrt();
    let rope = RopeTable::<T>::new(t, hd);

    // loss + dlogits
    let mut loss = 0.0f64;
    let mut dlogits = vec![T::ZERO; rows * v];
    let scale = 1.0 / n_pred as f64;
    let scale_t = T::from_f64(scale);
    for bi in 0..b {
        for pos in 0..t - 1 {
            let r = bi * t + pos;
            let target = tokens[r + 1] as usize;
            let row = trace.logit_row(r);
            loss += row_nll(row, target);
            // softmax - onehot, scaled
            let mut m = T::neg_infinity();
            for x in row {
                m = m.max(*x);
            }
            let drow = &mut dlogits[r * v..(r + 1) * v];
            let mut z = T::ZERO;
            for (dc, x) in drow.iter_mut().zip(row) {
                let e = (*x - m).exp();
                *dc = e;
                z = z + e;
            }
            let zr = z.recip();
            for dc in drow.iter_mut() {
                *dc = *dc * zr * scale_t;
            }
            drow[target] = drow[target] - scale_t;
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite { what: "loss" });
    }

    let mut grad = vec![T::ZERO; layout.total];

    // head: logits = final_normed @ lm_head
    let mut d_final_normed = vec![T::ZERO; rows * d];
    T::gemm_a_bt(rows, v, d, &dlogits, params.seg(layout.lm_head()), T::ZERO, &mut d_final_normed);
    {
        let (pre, post) = grad.split_at_mut(layout.lm_head().start);
        let _ = pre;
        let g_head = &mut post[..d * v];
        T::gemm_at_b(d, rows, v, &trace.final_normed, &dlogits, T::ONE, g_head);
    }

    // final norm
    let mut dx = vec![T::ZERO; rows * d]; // grad wrt xs[n_layers]
    {
        let fr = layout.final_norm();
        let gain = params.seg(fr.clone()).to_vec();
        rmsnorm_backward(
            &trace.xs[n_layers],
            &gain,
            &trace.final_inv,
            &d_final_normed,
            d,
            &mut dx,
            &mut grad[fr],
        );
    }

    for l in (0..n_layers).rev() {
        // ---- MLP block: x_out = x_mid + act @ w_down
        let mut dact = vec![T::ZERO; rows * f];
        T::gemm_a_bt(rows, d, f, &dx, params.seg(layout.w_down(l)), T::ZERO, &mut dact);
        T::gemm_at_b(f, rows, d, &trace.act[l], &dx, T::ONE, &mut grad[layout.w_down(l)]);

        let mut dgate_pre = vec![T::ZERO; rows * f];
        let mut dup = vec![T::ZERO; rows * f];
        for i in 0..rows * f {
            let z = trace.gate_pre[l][i];
            let sig = (T::ONE + (-z).exp()).recip();
            let silu = z * sig;
            let dsilu = sig * (T::ONE + z * (T::ONE - sig));
            let da = dact[i];
            dgate_pre[i] = da * trace.up[l][i] * dsilu;
            dup[i] = da * silu;
        }

        let mut d_mlp_normed = vec![T::ZERO; rows * d];
        T::gemm_a_bt(rows, f, d, &dgate_pre, params.seg(layout.w_gate(l)), T::ZERO, &mut d_mlp_normed);
        T::gemm_a_bt(rows, f, d, &dup, params.seg(layout.w_up(l)), T::ONE, &mut d_mlp_normed);
        T::gemm_at_b(d, rows, f, &trace.mlp_normed[l], &dgate_pre, T::ONE, &mut grad[layout.w_gate(l)]);
        T::gemm_at_b(d, rows, f, &trace.mlp_normed[l], &dup, T::ONE, &mut grad[layout.w_up(l)]);

        // dx currently holds grad wrt x_out; residual passes it to x_mid,
        // and the norm path adds its share.
        let mut dx_mid = dx;
        {
            let gain = params.seg(layout.mlp_norm(l)).to_vec();
            rmsnorm_backward(
                &trace.x_mid[l],
                &gain,
                &trace.mlp_inv[l],
                &d_mlp_normed,
                d,
                &mut dx_mid,
                &mut grad[layout.mlp_norm(l)],
            );
        }

        // ---- attention block: x_mid = x_in + ctx @ wo
        let mut dctx = vec![T::ZERO; rows * d];
        T::gemm_a_bt(rows, d, d, &dx_mid, params.seg(layout.wo(l)), T::ZERO, &mut dctx);
        T::gemm_at_b(d, rows, d, &trace.ctx[l], &dx_mid, T::ONE, &mut grad[layout.wo(l)]);

        let q = &trace.q[l];
        let k = &trace.k[l];
        let vv = &trace.v[l];
        let probs = &trace.probs[l];
        let mut dq = vec![T::ZERO; rows * d];
        let mut dk = vec![T::ZERO; rows * kv_dim];
        let mut dv = vec![T::ZERO; rows * kv_dim];
        let mut dp = vec![T::ZERO; t];
        let scale = T::from_f64(inv_sqrt_hd);
        for bi in 0..b {
            for h in 0..n_heads {
                let g = h / group;
                for i in 0..t {
                    let ri = bi * t + i;
                    let dctx_i = &dctx[ri * d + h * hd..ri * d + (h + 1) * hd];
                    let prow =
                        &probs[((bi * n_heads + h) * t + i) * t..((bi * n_heads + h) * t + i + 1) * t];
                    // dprobs and dv
                    let mut pdp = T::ZERO; // sum_j dp_j p_j for softmax backward
                    for j in 0..=i {
                        let rj = bi * t + j;
                        let vh = &vv[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        let mut s = T::ZERO;
                        for c in 0..hd {
                            s = s + dctx_i[c] * vh[c];
                        }
                        dp[j] = s;
                        let p = prow[j];
                        pdp = pdp + s * p;
                        let dvh = &mut dv[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        for c in 0..hd {
                            dvh[c] = dvh[c] + p * dctx_i[c];
                        }
                    }
                    // softmax backward + score scale
                    let (qs, dqs) = (
                        &q[ri * d + h * hd..ri * d + (h + 1) * hd],
                        ri * d + h * hd,
                    );
                    let qh: Vec<T> = qs.to_vec();
                    let dqh = &mut dq[dqs..dqs + hd];
                    for j in 0..=i {
                        let p = prow[j];
                        let ds = p * (dp[j] - pdp) * scale;
                        let rj = bi * t + j;
                        let kh = &k[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        let dkh = &mut dk[rj * kv_dim + g * hd..rj * kv_dim + (g + 1) * hd];
                        for c in 0..hd {
                            dqh[c] = dqh[c] + ds * kh[c];
                            dkh[c] = dkh[c] + ds * qh[c];
                        }
                    }
                }
            }
        }

        for r in 0..rows {
            let pos = r % t;
            rope.apply_inverse(&mut dq[r * d..(r + 1) * d], pos, n_heads, hd);
            rope.apply_inverse(&mut dk[r * kv_dim..(r + 1) * kv_dim], pos, n_kv, hd);
        }

        let mut d_attn_normed = vec![T::ZERO; rows * d];
        T::gemm_a_bt(rows, d, d, &dq, params.seg(layout.wq(l)), T::ZERO, &mut d_attn_normed);
        T::gemm_a_bt(rows, kv_dim, d, &dk, params.seg(layout.wk(l)), T::ONE, &mut d_attn_normed);
        T::gemm_a_bt(rows, kv_dim, d, &dv, params.seg(layout.wv(l)), T::ONE, &mut d_attn_normed);
        T::gemm_at_b(d, rows, d, &trace.attn_normed[l], &dq, T::ONE, &mut grad[layout.wq(l)]);
        T::gemm_at_b(d, rows, kv_dim, &trace.attn_normed[l], &dk, T::ONE, &mut grad[layout.wk(l)]);
        T::gemm_at_b(d, rows, kv_dim, &trace.attn_normed[l], &dv, T::ONE, &mut grad[layout.wv(l)]);

        let mut dx_in = dx_mid;
        {
            let gain = params.seg(layout.attn_norm(l)).to_vec();
            rmsnorm_backward(
                &trace.xs[l],
                &gain,
                &trace.attn_inv[l],
                &d_attn_normed,
                d,
                &mut dx_in,
                &mut grad[layout.attn_norm(l)],
            );
        }
        dx = dx_in;
    }

    // embeddings
    {
        let g_embed = &mut grad[layout.tok_embed()];
        for r in 0..rows {
            let tok = tokens[r] as usize;
            for c in 0..d {
                g_embed[tok * d + c] = g_embed[tok * d + c] + dx[r * d + c];
            }
        }
    }

    if grad.iter().any(|x| !x.as_f64().is_finite()) {
        return Err(ModelError::NonFinite { what: "gradient" });
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use rand::{Rng, SeedableRng};

    fn batch_loss<T: Scalar>(p: &Parameters<T>, tokens: &[TokenId], b: usize, t: usize) -> f64 {
        let trace = forward(p, tokens, b, t).unwrap();
        let mut loss = 0.0;
        for bi in 0..b {
            for pos in 0..t - 1 {
                let r = bi * t + pos;
                loss += row_nll(trace.logit_row(r), tokens[r + 1] as usize);
            }
        }
        loss / (b * (t - 1)) as f64
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            n_kv_heads: 2,
            d_ff: 32,
            context_len: 8,
            vocab_size: 256,
        };
        let mut p = init_params::<f64>(&cfg, 1);
        // zero head => identical logits => uniform distribution
        for x in &mut p.data[cfg.layout().lm_head()] {
            *x = 0.0;
        }
        let tokens: Vec<u32> = (0..8).map(|i| i as u32 * 11 % 256).collect();
        let (loss, _) = loss_and_grad(&p, &tokens, 1, 8).unwrap();
        assert!((loss - (256f64).ln()).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn duplicated_windows_leave_mean_loss_unchanged() {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            n_kv_heads: 1,
            d_ff: 32,
            context_len: 8,
            vocab_size: 17,
        };
        let p = init_params::<f64>(&cfg, 9);
        let w: Vec<u32> = (0..8).map(|i| (i * 5 % 17) as u32).collect();
        let (l1, _) = loss_and_grad(&p, &w, 1, 8).unwrap();
        let mut doubled = w.clone();
        doubled.extend_from_slice(&w);
        let (l2, _) = loss_and_grad(&p, &doubled, 2, 8).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // 2-layer d=16 model in f64, the gradient-check oracle.
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 32,
            context_len: 10,
            vocab_size: 19,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let p = init_params::<f64>(&cfg, 7);
        let tokens: Vec<u32> = (0..20).map(|_| rng.gen_range(0..19u32)).collect();
        let (_, grad) = loss_and_grad(&p, &tokens, 2, 10).unwrap();

        let h = 1e-4;
        let mut checked = 0;
        while checked < 120 {
            let idx = rng.gen_range(0..p.data.len());
            let mut pp = p.clone();
            pp.data[idx] += h;
            let lp = batch_loss(&pp, &tokens, 2, 10);
            pp.data[idx] = p.data[idx] - h;
            let lm = batch_loss(&pp, &tokens, 2, 10);
            let fd = (lp - lm) / (2.0 * h);
            let g = grad[idx];
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                (g - fd).abs() / denom < 1e-4,
                "coord {idx}: analytic {g} vs fd {fd}"
            );
            checked += 1;
        }
    }

    #[test]
    fn one_small_step_decreases_loss() {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 4,
            n_kv_heads: 4,
            d_ff: 64,
            context_len: 16,
            vocab_size: 29,
        };
        let p = init_params::<f32>(&cfg, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tokens: Vec<u32> = (0..64).map(|_| rng.gen_range(0..29u32)).collect();
        let (l0, grad) = loss_and_grad(&p, &tokens, 4, 16).unwrap();
        let mut p2 = p.clone();
        for (w, g) in p2.data.iter_mut().zip(&grad) {
            *w -= 1e-3 * g;
        }
        let l1 = batch_loss(&p2, &tokens, 4, 16);
        assert!(l1 < l0, "loss went {l0} -> {l1}");
    }
}
