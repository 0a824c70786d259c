//! A minimal decoder-only transformer with exact hand-written backprop.
//!
//! Parameters live in one flat buffer per model, row-major, with a fixed
//! segment order derived from the config (llm.c style). Gradients, Adam
//! moments, soups, and checkpoints all reuse the same layout.

mod backward;
mod checkpoint;
mod forward;
mod sample;

pub use backward::loss_and_grad;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use forward::{forward, row_nll, softmax_row, ForwardTrace};
pub use sample::{generate_sequences, generate_sequences_seeded, sample};

use crate::corpus::TokenId;
use crate::tensor::Scalar;
use rand::SeedableRng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

pub const RMS_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocab {vocab}")]
    BadToken { id: TokenId, vocab: u32 },
    #[error("window length {len} exceeds context {ctx}")]
    WindowTooLong { len: usize, ctx: usize },
    #[error("non-finite {what} encountered")]
    NonFinite { what: &'static str },
    #[error("parameter shapes disagree ({0})")]
    ShapeMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture shape. `n_heads` may exceed `n_kv_heads` (grouped-query
/// attention); activation is gated SiLU and positions are rotary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: u32,
}

impl ModelConfig {
    /// Default desk-scale model: trains in minutes on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 4,
            d_ff: 256,
            context_len: 64,
            vocab_size: 257,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::ShapeMismatch(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_kv_heads == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ModelError::ShapeMismatch(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.context_len < 2 {
            return Err(ModelError::ShapeMismatch("context_len must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    /// Total scalar parameter count for this shape.
    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Byte offsets of every named parameter segment inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub kv_dim: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub n_layers: usize,
    per_layer: usize,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let kv_dim = cfg.kv_dim();
        let f = cfg.d_ff;
        let v = cfg.vocab_size as usize;
        // attn_norm + wq + wk + wv + wo + mlp_norm + w_gate + w_up + w_down
        let per_layer = d + d * d + 2 * d * kv_dim + d * d + d + 2 * d * f + f * d;
        let total = v * d + cfg.n_layers * per_layer + d + d * v;
        Layout { d, kv_dim, d_ff: f, vocab: v, n_layers: cfg.n_layers, per_layer, total }
    }

    pub fn tok_embed(&self) -> std::ops::Range<usize> {
        0..self.vocab * self.d
    }

    fn layer_base(&self, l: usize) -> usize {
        self.vocab * self.d + l * self.per_layer
    }

    pub fn attn_norm(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l);
        b..b + self.d
    }

    pub fn wq(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + self.d;
        b..b + self.d * self.d
    }

    pub fn wk(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + self.d + self.d * self.d;
        b..b + self.d * self.kv_dim
    }

    pub fn wv(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + self.d + self.d * self.d + self.d * self.kv_dim;
        b..b + self.d * self.kv_dim
    }

    pub fn wo(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + self.d + self.d * self.d + 2 * self.d * self.kv_dim;
        b..b + self.d * self.d
    }

    pub fn mlp_norm(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + self.d + 2 * self.d * self.d + 2 * self.d * self.kv_dim;
        b..b + self.d
    }

    pub fn w_gate(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l) + 2 * self.d + 2 * self.d * self.d + 2 * self.d * self.kv_dim;
        b..b + self.d * self.d_ff
    }

    pub fn w_up(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l)
            + 2 * self.d
            + 2 * self.d * self.d
            + 2 * self.d * self.kv_dim
            + self.d * self.d_ff;
        b..b + self.d * self.d_ff
    }

    pub fn w_down(&self, l: usize) -> std::ops::Range<usize> {
        let b = self.layer_base(l)
            + 2 * self.d
            + 2 * self.d * self.d
            + 2 * self.d * self.kv_dim
            + 2 * self.d * self.d_ff;
        b..b + self.d_ff * self.d
    }

    pub fn final_norm(&self) -> std::ops::Range<usize> {
        let b = self.layer_base(self.n_layers);
        b..b + self.d
    }

    pub fn lm_head(&self) -> std::ops::Range<usize> {
        let b = self.layer_base(self.n_layers) + self.d;
        b..b + self.d * self.vocab
    }

    /// (name, range) for every segment in buffer order.
    pub fn segments(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = vec![("tok_embed".to_string(), self.tok_embed())];
        for l in 0..self.n_layers {
            out.push((format!("layer{l}.attn_norm"), self.attn_norm(l)));
            out.push((format!("layer{l}.wq"), self.wq(l)));
            out.push((format!("layer{l}.wk"), self.wk(l)));
            out.push((format!("layer{l}.wv"), self.wv(l)));
            out.push((format!("layer{l}.wo"), self.wo(l)));
            out.push((format!("layer{l}.mlp_norm"), self.mlp_norm(l)));
            out.push((format!("layer{l}.w_gate"), self.w_gate(l)));
            out.push((format!("layer{l}.w_up"), self.w_up(l)));
            out.push((format!("layer{l}.w_down"), self.w_down(l)));
        }
        out.push(("final_norm".to_string(), self.final_norm()));
        out.push(("lm_head".to_string(), self.lm_head()));
        out
    }

    /// Segments that are dense weight matrices (everything but the norm gains).
    pub fn matrix_segments(&self) -> Vec<std::ops::Range<usize>> {
        self.segments()
            .into_iter()
            .filter(|(name, _)| !name.ends_with("norm"))
            .map(|(_, r)| r)
            .collect()
    }
}

/// All learnable state of one model: a flat buffer addressed through `Layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T: Scalar> {
    pub config: ModelConfig,
    pub data: Vec<T>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let total = config.layout().total;
        Parameters { config: config.clone(), data: vec![T::ZERO; total] }
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn seg(&self, r: std::ops::Range<usize>) -> &[T] {
        &self.data[r]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.as_f64().is_finite())
    }
}

/// Draw matrix weights from N(0, c/d_model) and set norm gains to one;
/// bit-identical for equal (config, seed) regardless of scalar type width
/// because sampling happens in f64.
pub fn init_params<T: Scalar>(config: &ModelConfig, init_seed: u64) -> Parameters<T> {
    init_params_with_scale(config, init_seed, 1.0)
}

pub fn init_params_with_scale<T: Scalar>(
    config: &ModelConfig,
    init_seed: u64,
    variance_scale: f64,
) -> Parameters<T> {
    config.validate().expect("invalid model config");
    let layout = config.layout();
    let mut params = Parameters::zeros(config);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(init_seed);
    let sd = (variance_scale / config.d_model as f64).sqrt();
    let normal = rand_distr::Normal::new(0.0f64, sd).expect("valid sd");
    for (name, range) in layout.segments() {
        if name.ends_with("norm") {
            for v in &mut params.data[range] {
                *v = T::ONE;
            }
        } else {
            for v in &mut params.data[range] {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
    }
    params
}

/// Mix a seed with an index into a fresh stream seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_hand_count() {
        // embed 256*64 + 2*(64+4096*3+4096+64+16384*3) + 64 + 64*256
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 4,
            d_ff: 256,
            context_len: 64,
            vocab_size: 256,
        };
        let per_layer = 64 + 4096 + 4096 + 4096 + 4096 + 64 + 16384 + 16384 + 16384;
        let want = 256 * 64 + 2 * per_layer + 64 + 64 * 256;
        assert_eq!(cfg.param_count(), want);
        assert_eq!(want, 164_160);
    }

    #[test]
    fn segments_tile_the_buffer_exactly() {
        let cfg = ModelConfig {
            n_layers: 3,
            d_model: 48,
            n_heads: 6,
            n_kv_heads: 2,
            d_ff: 96,
            context_len: 32,
            vocab_size: 100,
        };
        let layout = cfg.layout();
        let mut cursor = 0usize;
        for (_, r) in layout.segments() {
            assert_eq!(r.start, cursor);
            cursor = r.end;
        }
        assert_eq!(cursor, layout.total);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::desk();
        let a: Parameters<f32> = init_params(&cfg, 42);
        let b: Parameters<f32> = init_params(&cfg, 42);
        let c: Parameters<f32> = init_params(&cfg, 43);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn init_variance_scales_inversely_with_width() {
        // Var ratio between d=64 and d=256 should be ~4.
        let var_of = |d_model: usize, n_heads: usize| -> f64 {
            let cfg = ModelConfig {
                n_layers: 2,
                d_model,
                n_heads,
                n_kv_heads: n_heads,
                d_ff: d_model * 4,
                context_len: 32,
                vocab_size: 256,
            };
            let p: Parameters<f64> = init_params(&cfg, 7);
            let layout = cfg.layout();
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut n = 0usize;
            for r in layout.matrix_segments() {
                for &v in &p.data[r] {
                    sum += v;
                    sumsq += v * v;
                    n += 1;
                }
            }
            assert!(n >= 100_000, "need >=1e5 samples, got {n}");
            let mean = sum / n as f64;
            sumsq / n as f64 - mean * mean
        };
        let ratio = var_of(64, 4) / var_of(256, 8);
        assert!((ratio - 4.0).abs() / 4.0 < 0.15, "ratio {ratio}");
    }

    #[test]
    fn gains_init_to_one() {
        let cfg = ModelConfig::desk();
        let p: Parameters<f32> = init_params(&cfg, 1);
        for v in p.seg(cfg.layout().final_norm()) {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, 0));
    }
}
