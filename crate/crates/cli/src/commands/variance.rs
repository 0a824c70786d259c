//! Run-to-run variance study: train seed-varied replicas per randomness
//! mode, report mean/std of the final loss, and compare prefix ensembles
//! against the single-model mean for each randomness source.

use crate::config::{parse_mode, ExperimentConfig};
use crate::pipeline::prefix_ensembles;
use crate::reportdoc::{full_scale_annotations, ReportPoint};
use anyhow::{anyhow, bail, Result};
use desklab_core::workspace::Workspace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: String,
    pub mean: f64,
    pub std: f64,
    pub member_keys: Vec<String>,
    pub member_losses: Vec<f64>,
    /// (K, ensemble loss, ledger key) for the prefix ensembles.
    pub k_sweep: Vec<(u32, f64, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceReport {
    pub modes: Vec<ModeOutcome>,
    pub points: Vec<ReportPoint>,
    pub annotations: BTreeMap<String, String>,
}

pub fn cmd_variance(ws: &mut Workspace, cfg: &ExperimentConfig) -> Result<VarianceReport> {
    let section =
        cfg.variance.as_ref().ok_or_else(|| anyhow!("config has no [variance] section"))?;
    if section.seeds.len() < 2 {
        bail!("variance needs at least 2 seeds, got {}", section.seeds.len());
    }
    let model = section.model.resolve()?;
    let hyper = section.hyper.resolve(ws.config.default_batch);
    let base = ws.run_spec(section.d, model.clone(), hyper, 1, 1, "variance")?;

    let mut report = VarianceReport {
        modes: Vec::new(),
        points: Vec::new(),
        annotations: full_scale_annotations(),
    };
    for mode_name in &section.modes {
        let mode = parse_mode(mode_name)?;
        let sv = ws.seed_variance(&base, mode, &section.seeds)?;
        println!(
            "{mode_name}: mean={:.6} std={:.6} over {} seeds",
            sv.mean,
            sv.std,
            sv.seeds.len()
        );
        let mut outcome = ModeOutcome {
            mode: mode_name.clone(),
            mean: sv.mean,
            std: sv.std,
            member_keys: sv.keys.clone(),
            member_losses: sv.losses.clone(),
            k_sweep: Vec::new(),
        };
        for (key, loss) in sv.keys.iter().zip(&sv.losses) {
            let mut axes = BTreeMap::new();
            axes.insert("k".to_string(), 1.0);
            report.points.push(ReportPoint {
                axes,
                loss: *loss,
                ledger_key: Some(key.clone()),
            });
        }
        if section.k_sweep {
            let ens = prefix_ensembles(ws, &sv.keys, &model)?;
            for rec in &ens {
                println!(
                    "  {mode_name} K={}: {:.6} ({})",
                    rec.k,
                    rec.val_loss,
                    if rec.val_loss < sv.mean { "beats member mean" } else { "above member mean" }
                );
                outcome.k_sweep.push((rec.k, rec.val_loss, rec.ledger_key.clone()));
                let mut axes = BTreeMap::new();
                axes.insert("k".to_string(), rec.k as f64);
                report.points.push(ReportPoint {
                    axes,
                    loss: rec.val_loss,
                    ledger_key: Some(rec.ledger_key.clone()),
                });
            }
        }
        report.modes.push(outcome);
    }
    println!(
        "full-scale reference stds: both={} init-only={} data-only={}",
        report.annotations["reference.run_std_both_seeds"],
        report.annotations["reference.run_std_init_seed_only"],
        report.annotations["reference.run_std_data_seed_only"],
    );
    let path = ws.reports_dir().join("variance.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
    println!("variance report written to {}", path.display());
    Ok(report)
}
