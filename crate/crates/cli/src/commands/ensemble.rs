//! Build and evaluate logit-averaged ensembles: either over explicit
//! ledger keys, or by training a fresh seed-varied member set and sweeping
//! the member count.

use crate::config::ExperimentConfig;
use crate::pipeline::{fit_k_law, prefix_ensembles, train_members};
use crate::plot::plot_fit;
use crate::reportdoc::FitDoc;
use anyhow::{anyhow, bail, Result};
use desklab_core::ensemble::{ensemble_eval, EnsembleSpec};
use desklab_core::ledger::EnsembleRecord;
use desklab_core::scalinglaw::FitOptions;
use desklab_core::workspace::Workspace;

pub fn cmd_ensemble(ws: &mut Workspace, cfg: &ExperimentConfig) -> Result<Vec<EnsembleRecord>> {
    let section =
        cfg.ensemble.as_ref().ok_or_else(|| anyhow!("config has no [ensemble] section"))?;

    let records = if let Some(keys) = &section.members {
        // evaluate one ensemble over existing runs
        let first = ws
            .ledger
            .get_run(&keys[0])
            .ok_or_else(|| anyhow!("member key {} not in ledger", keys[0]))?;
        let spec = EnsembleSpec::new(keys.clone(), first.config.clone());
        vec![ensemble_eval(ws, &spec)?]
    } else {
        // train members and sweep K
        let (Some(d), Some(model), Some(hyper)) = (&section.d, &section.model, &section.hyper)
        else {
            bail!("[ensemble] needs either members=[...] or d/model/hyper");
        };
        let model = model.resolve()?;
        let hyper = hyper.resolve(ws.config.default_batch);
        let members =
            train_members(ws, *d, &model, &hyper, section.k_max, section.base_seed, &section.tag)?;
        let keys: Vec<String> = members.iter().map(|m| m.ledger_key.clone()).collect();
        let mean: f64 =
            members.iter().map(|m| m.final_val_loss.unwrap_or(f64::INFINITY)).sum::<f64>()
                / members.len() as f64;
        println!("member mean loss: {mean:.6}");
        prefix_ensembles(ws, &keys, &model)?
    };

    for r in &records {
        println!(
            "K={} total_params={} val={:.6} key={}",
            r.k, r.total_params, r.val_loss, r.ledger_key
        );
    }

    if section.fit_k_law && records.len() >= 3 {
        let name = format!("{}-klaw", section.tag);
        let named = fit_k_law(&records, &name, &FitOptions::default())?;
        println!(
            "member-count law: A={:.6} alpha={:.6} E={:.6} (sse {:.3e}{})",
            named.fit.a,
            named.fit.alpha,
            named.fit.e,
            named.fit.residual_sse,
            if named.fit.converged { "" } else { ", NOT CONVERGED" }
        );
        let doc = FitDoc::Law(named.clone());
        let fit_path = ws.fits_dir().join(format!("{name}.json"));
        std::fs::write(&fit_path, serde_json::to_vec_pretty(&doc)?)?;
        let svg = plot_fit(&named.fit, &name, "ensemble members K");
        std::fs::write(ws.reports_dir().join(format!("{name}.svg")), svg)?;
        println!("fit written to {}", fit_path.display());
    }
    Ok(records)
}
