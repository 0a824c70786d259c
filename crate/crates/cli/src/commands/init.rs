//! Create a workspace: ingest a text file (or a deterministic generated
//! corpus), freeze the validation tail, write the master pool.

use anyhow::{bail, Context, Result};
use desklab_core::corpus::{sample_text, TokenizerSpec};
use desklab_core::workspace::{Workspace, WorkspaceConfig};
use std::path::{Path, PathBuf};

#[allow(clippy::too_many_arguments)]
pub fn cmd_init(
    root: &Path,
    source: Option<PathBuf>,
    sample_tokens: Option<u64>,
    sample_seed: u64,
    context_len: usize,
    val_windows: usize,
    no_bos: bool,
) -> Result<()> {
    let bytes = match (&source, sample_tokens) {
        (Some(path), None) => std::fs::read(path)
            .with_context(|| format!("cannot read source {}", path.display()))?,
        (None, Some(n)) => {
            // reserve room for the validation tail on top of the requested budget
            let total = n as usize + val_windows * context_len;
            sample_text(sample_seed, total).into_bytes()
        }
        _ => bail!("provide exactly one of --source FILE or --sample-tokens N"),
    };
    let config = WorkspaceConfig {
        tokenizer: if no_bos { TokenizerSpec::byte_level() } else { TokenizerSpec::byte_level_with_bos() },
        context_len,
        val_windows,
        ..WorkspaceConfig::default()
    };
    let ws = Workspace::create(root, &bytes, config)?;
    println!(
        "workspace {} ready: {} train tokens, {} validation windows of {} tokens",
        root.display(),
        ws.master_tokens(),
        ws.validation().n_windows(),
        ws.validation().window_len
    );
    Ok(())
}
