//! The training routine: AdamW with decoupled weight decay, cosine schedule
//! with linear warmup, global-norm gradient clipping, epoched data in a
//! fixed permutation, and loss bookkeeping. A run is a pure function of its
//! spec: same seeds, same batches, same floats.

use crate::corpus::{epoch_stream, make_windows, Permutation, TokenId, TokenPool, ValidationSet};
use crate::model::{forward, init_params, loss_and_grad, row_nll, ModelConfig, ModelError, Parameters};
use crate::tensor::{l2_norm, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: u64 },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The tunable hyperparameter tuple. Epoch count is the number of passes
/// over the fixed pool; everything else is what it says.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub peak_lr: f64,
    pub epochs: u32,
    pub weight_decay: f64,
    pub batch_size: u32,
}

impl Hyper {
    pub fn validate(&self) {
        assert!(self.peak_lr > 0.0, "peak_lr must be positive");
        assert!(self.epochs >= 1 && self.batch_size >= 1);
        assert!(self.weight_decay >= 0.0);
    }
}

/// Everything that identifies one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub pool_hash: String,
    pub d_tokens: u64,
    pub config: ModelConfig,
    pub hyper: Hyper,
    pub init_seed: u64,
    pub data_seed: u64,
    pub recipe_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Loss bookkeeping produced by the training loop. The reported validation
/// loss is always the post-anneal value, evaluated after the schedule has
/// fully decayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub final_val_loss: f64,
    /// Mean batch train loss over the final curve segment.
    pub final_train_loss: f64,
    pub loss_curve: Vec<CurvePoint>,
    pub tokens_seen: u64,
    pub steps: u64,
}

/// Fixed knobs that are workspace policy rather than searched hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainKnobs {
    pub warmup_frac: f64,
    pub max_grad_norm: f64,
    /// Number of evenly spaced loss-curve checkpoints (besides step 0).
    pub curve_points: usize,
    /// Windows per forward pass during evaluation.
    pub eval_chunk: usize,
    /// Draw a fresh window permutation each epoch instead of reusing one.
    /// Off by default: one fixed permutation removes a randomness source.
    #[serde(default)]
    pub reshuffle_each_epoch: bool,
}

impl Default for TrainKnobs {
    fn default() -> Self {
        TrainKnobs {
            warmup_frac: 0.01,
            max_grad_norm: 1.0,
            curve_points: 20,
            eval_chunk: 16,
            reshuffle_each_epoch: false,
        }
    }
}

/// Cosine schedule with linear warmup: 0 at step 0, `peak_lr` at the end of
/// warmup, exactly 0 at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, peak_lr: f64, warmup_frac: f64) -> f64 {
    assert!(step <= total_steps && total_steps > 0);
    assert!(warmup_frac > 0.0 && warmup_frac < 1.0);
    let w = warmup_frac * total_steps as f64;
    let s = step as f64;
    if s < w {
        peak_lr * s / w
    } else {
        let progress = (s - w) / (total_steps as f64 - w);
        peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grads<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            *g = *g * s;
        }
    }
    norm
}

/// Adam first/second-moment accumulators, shaped like the parameter buffer.
#[derive(Debug, Clone)]
pub struct OptState<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> OptState<T> {
    pub fn new(n: usize) -> Self {
        OptState { m: vec![T::ZERO; n], v: vec![T::ZERO; n], step: 0 }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.95;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected AdamW update with decoupled decay:
/// theta' = theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
pub fn adamw_step<T: Scalar>(
    state: &mut OptState<T>,
    params: &mut [T],
    grads: &[T],
    lr: f64,
    wd: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    assert!(lr >= 0.0);
    state.step += 1;
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let one_m_b1 = T::from_f64(1.0 - ADAM_BETA1);
    let one_m_b2 = T::from_f64(1.0 - ADAM_BETA2);
    let bc1 = T::from_f64(1.0 / (1.0 - ADAM_BETA1.powi(state.step as i32)));
    let bc2 = T::from_f64(1.0 / (1.0 - ADAM_BETA2.powi(state.step as i32)));
    let eps = T::from_f64(ADAM_EPS);
    let lr_t = T::from_f64(lr);
    let wd_t = T::from_f64(wd);
    for i in 0..params.len() {
        let g = grads[i];
        if !g.as_f64().is_finite() {
            return Err(TrainError::NonFinite { step: state.step });
        }
        state.m[i] = b1 * state.m[i] + one_m_b1 * g;
        state.v[i] = b2 * state.v[i] + one_m_b2 * g * g;
        let m_hat = state.m[i] * bc1;
        let v_hat = state.v[i] * bc2;
        let update = m_hat / (v_hat.sqrt() + eps);
        params[i] = params[i] - lr_t * (update + wd_t * params[i]);
    }
    Ok(())
}

/// One batch of training tokens, flattened `[b * t]`.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tokens: Vec<TokenId>,
    pub b: usize,
    pub t: usize,
}

impl TokenBatch {
    pub fn gather(pool_windows: &crate::corpus::Windows<'_>, indices: &[u32]) -> TokenBatch {
        let t = pool_windows.context_len;
        let mut tokens = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            tokens.extend_from_slice(pool_windows.window(i as usize));
        }
        TokenBatch { tokens, b: indices.len(), t }
    }
}

/// Mean next-token NLL (nats/token) of the logit-average of `members` on the
/// validation set. With one member the averaging path divides by K=1, which
/// is exact, so this is bitwise identical to a direct eval. Reduction order
/// is fixed: windows in set order, members in slice order.
pub fn eval_logitavg_loss(
    members: &[&Parameters<f32>],
    validation: &ValidationSet,
    eval_chunk: usize,
) -> Result<f64, ModelError> {
    assert!(!members.is_empty());
    assert!(!validation.windows.is_empty(), "validation set must be non-empty");
    let t = validation.window_len;
    let k = members.len() as f64;
    let vocab = members[0].config.vocab_size as usize;
    let mut nll_sum = 0.0f64;
    let mut n_pred = 0u64;
    let mut chunk_start = 0usize;
    while chunk_start < validation.windows.len() {
        let chunk_end = (chunk_start + eval_chunk).min(validation.windows.len());
        let b = chunk_end - chunk_start;
        let mut tokens = Vec::with_capacity(b * t);
        for w in &validation.windows[chunk_start..chunk_end] {
            tokens.extend_from_slice(w);
        }
        let traces = members
            .iter()
            .map(|p| forward(p, &tokens, b, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut avg_row = vec![0.0f64; vocab];
        for bi in 0..b {
            for pos in 0..t - 1 {
                let r = bi * t + pos;
                for x in avg_row.iter_mut() {
                    *x = 0.0;
                }
                for tr in &traces {
                    for (a, l) in avg_row.iter_mut().zip(tr.logit_row(r)) {
                        *a += l.as_f64();
                    }
                }
                for x in avg_row.iter_mut() {
                    *x /= k;
                }
                nll_sum += row_nll(&avg_row, tokens[r + 1] as usize);
                n_pred += 1;
            }
        }
        chunk_start = chunk_end;
    }
    Ok(nll_sum / n_pred as f64)
}

/// Mean NLL of a single model on the validation set.
pub fn eval_loss(
    params: &Parameters<f32>,
    validation: &ValidationSet,
    eval_chunk: usize,
) -> Result<f64, ModelError> {
    eval_logitavg_loss(&[params], validation, eval_chunk)
}

/// The inner optimization loop shared by plain pre-training and
/// distillation: any deterministic batch stream works.
pub fn train_on_stream(
    params: &mut Parameters<f32>,
    batches: impl Iterator<Item = TokenBatch>,
    total_steps: u64,
    hyper: &Hyper,
    knobs: &TrainKnobs,
    validation: &ValidationSet,
) -> Result<TrainStats, TrainError> {
    assert!(total_steps > 0);
    let mut opt = OptState::<f32>::new(params.data.len());
    let mut curve = Vec::with_capacity(knobs.curve_points + 2);
    let seg = (total_steps as f64 / knobs.curve_points.max(1) as f64).max(1.0);
    let mut next_checkpoint = 1u64;
    let mut seg_loss_sum = 0.0f64;
    let mut seg_loss_n = 0u64;
    let mut tokens_seen = 0u64;
    let mut step = 0u64;

    for batch in batches {
        let (loss, mut grads) = match loss_and_grad(params, &batch.tokens, batch.b, batch.t) {
            Ok(x) => x,
            Err(ModelError::NonFinite { .. }) => return Err(TrainError::NonFinite { step }),
            Err(e) => return Err(e.into()),
        };
        if step == 0 {
            // checkpoint 0: first batch loss at init, pre-update
            let val = eval_loss(params, validation, knobs.eval_chunk)?;
            curve.push(CurvePoint { step: 0, train_loss: loss, val_loss: val });
        }
        seg_loss_sum += loss;
        seg_loss_n += 1;
        clip_grads(&mut grads, knobs.max_grad_norm);
        let lr = lr_at(step, total_steps, hyper.peak_lr, knobs.warmup_frac);
        adamw_step(&mut opt, &mut params.data, &grads, lr, hyper.weight_decay)
            .map_err(|_| TrainError::NonFinite { step })?;
        if !params.all_finite() {
            return Err(TrainError::NonFinite { step });
        }
        tokens_seen += (batch.b * batch.t) as u64;
        step += 1;
        // checkpoint when a segment boundary is crossed, except at the end
        if step < total_steps && step as f64 >= next_checkpoint as f64 * seg {
            let val = eval_loss(params, validation, knobs.eval_chunk)?;
            curve.push(CurvePoint {
                step,
                train_loss: seg_loss_sum / seg_loss_n as f64,
                val_loss: val,
            });
            seg_loss_sum = 0.0;
            seg_loss_n = 0;
            next_checkpoint += 1;
        }
    }
    assert_eq!(step, total_steps, "stream length disagrees with total_steps");

    let final_val = eval_loss(params, validation, knobs.eval_chunk)?;
    let final_train = if seg_loss_n > 0 {
        seg_loss_sum / seg_loss_n as f64
    } else {
        curve.last().map(|c| c.train_loss).unwrap_or(f64::NAN)
    };
    curve.push(CurvePoint { step, train_loss: final_train, val_loss: final_val });
    Ok(TrainStats {
        final_val_loss: final_val,
        final_train_loss: final_train,
        loss_curve: curve,
        tokens_seen,
        steps: step,
    })
}

/// Train a fresh model per `spec` on `pool`, deterministic in
/// `(init_seed, data_seed)`. Returns the stats and the trained parameters;
/// caching and ledger writes live in the workspace layer.
pub fn execute_run(
    spec: &RunSpec,
    pool: &TokenPool,
    validation: &ValidationSet,
    knobs: &TrainKnobs,
) -> Result<(TrainStats, Parameters<f32>), TrainError> {
    spec.hyper.validate();
    spec.config.validate()?;
    let windows = make_windows(pool, spec.config.context_len);
    if windows.is_empty() {
        return Err(crate::corpus::CorpusError::EmptyPool.into());
    }
    let epochs = spec.hyper.epochs as usize;
    let batch_size = spec.hyper.batch_size as usize;
    let batch_indices: Vec<Vec<u32>> = if knobs.reshuffle_each_epoch {
        let mut all = Vec::new();
        for e in 0..epochs {
            let perm =
                Permutation::new(windows.len(), crate::model::derive_seed(spec.data_seed, e as u64));
            all.extend(epoch_stream(windows.len(), &perm, 1, batch_size)?);
        }
        all
    } else {
        let perm = Permutation::new(windows.len(), spec.data_seed);
        epoch_stream(windows.len(), &perm, epochs, batch_size)?.collect()
    };
    let total_steps = batch_indices.len() as u64;
    let mut params = init_params::<f32>(&spec.config, spec.init_seed);
    let batches = batch_indices.into_iter().map(|idx| TokenBatch::gather(&windows, &idx));
    let stats = train_on_stream(&mut params, batches, total_steps, &spec.hyper, knobs, validation)?;
    debug_assert_eq!(
        stats.tokens_seen,
        spec.hyper.epochs as u64 * windows.len() as u64 * spec.config.context_len as u64
    );
    Ok((stats, params))
}

/// Seed axis varied by a variance study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    Both,
    InitOnly,
    DataOnly,
}

impl SeedMode {
    /// Apply variant seed `s` to the axes this mode varies.
    pub fn apply(&self, spec: &RunSpec, s: u64) -> RunSpec {
        let mut out = spec.clone();
        match self {
            SeedMode::Both => {
                out.init_seed = s;
                out.data_seed = s;
            }
            SeedMode::InitOnly => out.init_seed = s,
            SeedMode::DataOnly => out.data_seed = s,
        }
        out
    }
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    assert!(xs.len() >= 2);
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return (xs[0], 0.0); // bitwise-equal samples have exactly zero spread
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_pool, sample_text, TokenizerSpec};

    #[test]
    fn schedule_hits_peak_midpoint_and_zero() {
        let peak = 3e-3;
        assert!((lr_at(10, 100, peak, 0.1) - peak).abs() < 1e-15);
        assert!((lr_at(55, 100, peak, 0.1) - peak / 2.0).abs() < 1e-12);
        assert!(lr_at(100, 100, peak, 0.1).abs() < 1e-18);
        assert_eq!(lr_at(0, 100, peak, 0.1), 0.0);
    }

    #[test]
    fn clip_leaves_small_grads_and_rescales_large() {
        let mut g = vec![0.3f64, 0.4];
        clip_grads(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![1.2f64, 1.6]; // norm 2.0
        clip_grads(&mut g, 1.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-9);
        assert!((g[0] - 0.6).abs() < 1e-12);
        let mut g = vec![0.0f64; 4];
        clip_grads(&mut g, 1.0);
        assert_eq!(g, vec![0.0; 4]);
    }

    #[test]
    fn adamw_first_step_matches_hand_value() {
        // theta=1, g=1, fresh state, lr=0.1, wd=0.1:
        // m_hat = v_hat = 1, update = 1/(1+1e-8), theta' ~ 0.89
        let mut st = OptState::<f64>::new(1);
        let mut p = vec![1.0f64];
        adamw_step(&mut st, &mut p, &[1.0], 0.1, 0.1).unwrap();
        let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.1);
        assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
        assert!((want - 0.89).abs() < 1e-6);
    }

    #[test]
    fn adamw_zero_grad_zero_wd_is_identity() {
        let mut st = OptState::<f64>::new(2);
        let mut p = vec![0.5f64, -2.0];
        adamw_step(&mut st, &mut p, &[0.0, 0.0], 0.1, 0.0).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn adamw_lr_zero_updates_moments_only() {
        let mut st = OptState::<f64>::new(1);
        let mut p = vec![1.0f64];
        adamw_step(&mut st, &mut p, &[2.0], 0.0, 0.5).unwrap();
        assert_eq!(p, vec![1.0]);
        assert!(st.m[0] > 0.0 && st.v[0] > 0.0 && st.step == 1);
    }

    #[test]
    fn weight_decay_shrinks_geometrically_with_zero_grads() {
        let mut st = OptState::<f64>::new(1);
        let mut p = vec![2.0f64];
        let (lr, wd) = (0.1, 0.5);
        for k in 1..=5 {
            adamw_step(&mut st, &mut p, &[0.0], lr, wd).unwrap();
            let want = 2.0 * (1.0 - lr * wd).powi(k);
            assert!((p[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn adamw_rejects_non_finite_grads() {
        let mut st = OptState::<f64>::new(1);
        let mut p = vec![1.0f64];
        assert!(matches!(
            adamw_step(&mut st, &mut p, &[f64::NAN], 0.1, 0.0),
            Err(TrainError::NonFinite { .. })
        ));
    }

    fn desk_fixture(n_tokens: usize) -> (TokenPool, ValidationSet) {
        let spec = TokenizerSpec::byte_level_with_bos();
        let text = sample_text(400, n_tokens + 16 * 64);
        let all = build_pool(text.as_bytes(), n_tokens + 16 * 64, &spec).unwrap();
        let pool = all.prefix(n_tokens).unwrap();
        let val_windows: Vec<Vec<u32>> = (0..16)
            .map(|i| all.tokens[n_tokens + i * 64..n_tokens + (i + 1) * 64].to_vec())
            .collect();
        (pool, ValidationSet { windows: val_windows, window_len: 64 })
    }

    #[test]
    fn memorizable_corpus_drops_train_loss_by_a_nat() {
        let (pool, val) = desk_fixture(64 * 64); // 64 windows
        let spec = RunSpec {
            pool_hash: pool.pool_hash.clone(),
            d_tokens: pool.size_d() as u64,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 1e-3, epochs: 16, weight_decay: 0.1, batch_size: 16 },
            init_seed: 1,
            data_seed: 2,
            recipe_tag: "test".into(),
        };
        let (stats, _) = execute_run(&spec, &pool, &val, &TrainKnobs::default()).unwrap();
        let initial = stats.loss_curve[0].train_loss;
        assert!(
            initial - stats.final_train_loss >= 1.0,
            "train loss {initial} -> {}",
            stats.final_train_loss
        );
        assert_eq!(stats.tokens_seen, 16 * 64 * 64);
    }

    #[test]
    fn identical_specs_reproduce_bitwise() {
        let (pool, val) = desk_fixture(32 * 64);
        let spec = RunSpec {
            pool_hash: pool.pool_hash.clone(),
            d_tokens: pool.size_d() as u64,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 1e-3, epochs: 2, weight_decay: 0.1, batch_size: 16 },
            init_seed: 7,
            data_seed: 8,
            recipe_tag: "test".into(),
        };
        let (a, pa) = execute_run(&spec, &pool, &val, &TrainKnobs::default()).unwrap();
        let (b, pb) = execute_run(&spec, &pool, &val, &TrainKnobs::default()).unwrap();
        assert_eq!(a.final_val_loss.to_bits(), b.final_val_loss.to_bits());
        assert_eq!(a.final_train_loss.to_bits(), b.final_train_loss.to_bits());
        assert_eq!(pa.data, pb.data);
    }

    #[test]
    fn empty_pool_is_rejected() {
        let (pool, val) = desk_fixture(32 * 64);
        let tiny = pool.prefix(10).unwrap(); // shorter than one window
        let spec = RunSpec {
            pool_hash: tiny.pool_hash.clone(),
            d_tokens: 10,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 1e-3, epochs: 1, weight_decay: 0.1, batch_size: 16 },
            init_seed: 1,
            data_seed: 1,
            recipe_tag: "test".into(),
        };
        assert!(matches!(
            execute_run(&spec, &tiny, &val, &TrainKnobs::default()),
            Err(TrainError::Corpus(crate::corpus::CorpusError::EmptyPool))
        ));
    }

    #[test]
    fn uniform_model_evaluates_to_log_vocab() {
        let (_, val) = desk_fixture(16 * 64);
        let cfg = ModelConfig { vocab_size: 256, ..ModelConfig::desk() };
        let mut p = init_params::<f32>(&cfg, 1);
        for x in &mut p.data[cfg.layout().lm_head()] {
            *x = 0.0;
        }
        let loss = eval_loss(&p, &val, 16).unwrap();
        assert!((loss - (256f64).ln()).abs() < 1e-6);
        let again = eval_loss(&p, &val, 16).unwrap();
        assert_eq!(loss.to_bits(), again.to_bits());
    }

    #[test]
    fn heavy_training_memorizes_one_window() {
        let spec = TokenizerSpec::byte_level_with_bos();
        let text = sample_text(41, 4096);
        let pool = build_pool(text.as_bytes(), 64, &spec).unwrap();
        let val = ValidationSet { windows: vec![pool.tokens.clone()], window_len: 64 };
        let run = RunSpec {
            pool_hash: pool.pool_hash.clone(),
            d_tokens: 64,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 3e-3, epochs: 400, weight_decay: 0.0, batch_size: 1 },
            init_seed: 3,
            data_seed: 4,
            recipe_tag: "memorize".into(),
        };
        let (_, params) = execute_run(&run, &pool, &val, &TrainKnobs::default()).unwrap();
        let loss = eval_loss(&params, &val, 16).unwrap();
        assert!(loss < 0.5, "memorized loss {loss}");
    }

    #[test]
    fn mean_std_degenerate_case() {
        let (m, s) = mean_std(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn loss_curve_records_train_and_val_at_every_checkpoint() {
        let (pool, val) = desk_fixture(32 * 64);
        let spec = RunSpec {
            pool_hash: pool.pool_hash.clone(),
            d_tokens: pool.size_d() as u64,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 1e-3, epochs: 4, weight_decay: 0.1, batch_size: 16 },
            init_seed: 5,
            data_seed: 6,
            recipe_tag: "curve".into(),
        };
        let (stats, _) = execute_run(&spec, &pool, &val, &TrainKnobs::default()).unwrap();
        assert!(stats.loss_curve.len() >= 3);
        assert_eq!(stats.loss_curve[0].step, 0);
        assert_eq!(stats.loss_curve.last().unwrap().step, stats.steps);
        for c in &stats.loss_curve {
            assert!(c.train_loss.is_finite() && c.val_loss.is_finite());
        }
        assert_eq!(stats.loss_curve.last().unwrap().val_loss, stats.final_val_loss);
    }

    #[test]
    fn reshuffle_option_changes_order_but_stays_deterministic() {
        let (pool, val) = desk_fixture(32 * 64);
        let spec = RunSpec {
            pool_hash: pool.pool_hash.clone(),
            d_tokens: pool.size_d() as u64,
            config: ModelConfig::desk(),
            hyper: Hyper { peak_lr: 1e-3, epochs: 2, weight_decay: 0.1, batch_size: 16 },
            init_seed: 5,
            data_seed: 6,
            recipe_tag: "reshuffle".into(),
        };
        let fixed = TrainKnobs::default();
        let shuffled = TrainKnobs { reshuffle_each_epoch: true, ..TrainKnobs::default() };
        let (a1, _) = execute_run(&spec, &pool, &val, &shuffled).unwrap();
        let (a2, _) = execute_run(&spec, &pool, &val, &shuffled).unwrap();
        let (b, _) = execute_run(&spec, &pool, &val, &fixed).unwrap();
        assert_eq!(a1.final_val_loss.to_bits(), a2.final_val_loss.to_bits());
        assert_ne!(a1.final_val_loss.to_bits(), b.final_val_loss.to_bits());
    }
}
