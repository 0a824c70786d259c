//! Shared experiment-pipeline steps used by the ensemble, recipe, and
//! variance commands: training seed-varied member sets, evaluating prefix
//! ensembles, and fitting member-count laws.

use crate::reportdoc::NamedFit;
use anyhow::{bail, Result};
use desklab_core::ensemble::{ensemble_eval, EnsembleSpec};
use desklab_core::ledger::{EnsembleRecord, RunRecord};
use desklab_core::model::{derive_seed, ModelConfig};
use desklab_core::scalinglaw::{fit_power_law, FitOptions};
use desklab_core::trainer::Hyper;
use desklab_core::workspace::Workspace;

/// Train `k` members that differ only in their seeds (both init and data
/// seeds vary, derived from `base_seed`). Cached members cost nothing.
pub fn train_members(
    ws: &mut Workspace,
    d: u64,
    config: &ModelConfig,
    hyper: &Hyper,
    k: u32,
    base_seed: u64,
    tag: &str,
) -> Result<Vec<RunRecord>> {
    let mut out = Vec::with_capacity(k as usize);
    for m in 0..k as u64 {
        let spec = ws.run_spec(
            d,
            config.clone(),
            hyper.clone(),
            derive_seed(base_seed, 2 * m),
            derive_seed(base_seed, 2 * m + 1),
            tag,
        )?;
        out.push(ws.train(&spec)?);
    }
    Ok(out)
}

/// Evaluate the K=1..k prefix ensembles of `member_keys` (in training
/// order). Every evaluation is ledgered.
pub fn prefix_ensembles(
    ws: &mut Workspace,
    member_keys: &[String],
    config: &ModelConfig,
) -> Result<Vec<EnsembleRecord>> {
    let mut out = Vec::with_capacity(member_keys.len());
    for k in 1..=member_keys.len() {
        let spec = EnsembleSpec::new(member_keys[..k].to_vec(), config.clone());
        out.push(ensemble_eval(ws, &spec)?);
    }
    Ok(out)
}

/// Fit the member-count law over (K, loss) ensemble points.
pub fn fit_k_law(records: &[EnsembleRecord], name: &str, options: &FitOptions) -> Result<NamedFit> {
    if records.len() < 3 {
        bail!("member-count law needs at least 3 ensemble sizes, got {}", records.len());
    }
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.k as f64, r.val_loss)).collect();
    let fit = fit_power_law(&points, options)?;
    Ok(NamedFit {
        name: name.to_string(),
        x_axis: "members".to_string(),
        fit,
        point_keys: records.iter().map(|r| Some(r.ledger_key.clone())).collect(),
    })
}
