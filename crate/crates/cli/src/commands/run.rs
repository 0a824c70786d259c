//! Execute the runs a config declares: single runs, hyperparameter sweeps
//! (including batch-size ablations), and seed-varied member sets.
//! Already-ledgered specs cost nothing and just echo their keys.

use crate::config::ExperimentConfig;
use anyhow::{bail, Result};
use desklab_core::ledger::{key_for, RunStatus};
use desklab_core::model::derive_seed;
use desklab_core::trainer::Hyper;
use desklab_core::workspace::Workspace;

pub fn cmd_run(ws: &mut Workspace, cfg: &ExperimentConfig) -> Result<Vec<String>> {
    if cfg.run.is_empty() {
        bail!("config has no [[run]] sections");
    }
    let mut keys = Vec::new();
    for section in &cfg.run {
        let model = section.model.resolve()?;
        let batches = section
            .batch
            .as_ref()
            .map(|b| b.values())
            .unwrap_or_else(|| vec![ws.config.default_batch]);

        // cartesian sweep over all list-valued axes
        let mut hypers = Vec::new();
        for &lr in &section.lr.values() {
            for &epochs in &section.epochs.values() {
                for &wd in &section.wd.values() {
                    for &batch_size in &batches {
                        hypers.push(Hyper { peak_lr: lr, epochs, weight_decay: wd, batch_size });
                    }
                }
            }
        }

        for hyper in hypers {
            for m in 0..section.members as u64 {
                let (init_seed, data_seed) = if section.members == 1 {
                    (section.init_seed, section.data_seed)
                } else {
                    (
                        derive_seed(section.init_seed, 2 * m),
                        derive_seed(section.data_seed, 2 * m + 1),
                    )
                };
                let spec = ws.run_spec(
                    section.d,
                    model.clone(),
                    hyper.clone(),
                    init_seed,
                    data_seed,
                    &section.tag,
                )?;
                let cached = ws.ledger.get(&key_for("run", &spec)).is_some();
                let rec = ws.train(&spec)?;
                let status = match rec.status {
                    RunStatus::Ok => format!("val={:.6}", rec.final_val_loss.unwrap()),
                    RunStatus::Failed => format!("FAILED at step {}", rec.failed_step.unwrap_or(0)),
                };
                println!(
                    "{} {} {}",
                    rec.ledger_key,
                    status,
                    if cached { "(cached)" } else { "(trained)" }
                );
                keys.push(rec.ledger_key);
            }
        }
    }
    Ok(keys)
}
