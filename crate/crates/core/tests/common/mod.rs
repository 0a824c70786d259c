//! Shared fixture: a small workspace that trains in about a second per run.

use desklab_core::corpus::sample_text;
use desklab_core::model::ModelConfig;
use desklab_core::trainer::Hyper;
use desklab_core::workspace::{Workspace, WorkspaceConfig};
use std::path::Path;

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 2,
        n_kv_heads: 2,
        d_ff: 64,
        context_len: 32,
        vocab_size: 257,
    }
}

pub fn tiny_workspace(dir: &Path) -> Workspace {
    let config = WorkspaceConfig {
        context_len: 32,
        val_windows: 16,
        desk_model: tiny_model(),
        ..WorkspaceConfig::default()
    };
    let text = sample_text(2024, 40_000);
    Workspace::create(dir, text.as_bytes(), config).unwrap()
}

pub fn quick_hyper(epochs: u32) -> Hyper {
    Hyper { peak_lr: 1e-3, epochs, weight_decay: 0.1, batch_size: 16 }
}
