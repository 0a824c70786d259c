//! Command-line front end for the desklab pre-training laboratory: batch
//! experiment orchestration over a workspace, with every result cached in
//! the ledger and every report traceable back to it.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod reportdoc;

use anyhow::{bail, Result};
use std::path::PathBuf;

/// Workspace root: the --workspace flag wins, then DESKLAB_WORKSPACE.
pub fn resolve_workspace_root(flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Ok(env) = std::env::var("DESKLAB_WORKSPACE") {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    bail!("no workspace selected: pass --workspace ROOT or set DESKLAB_WORKSPACE")
}
