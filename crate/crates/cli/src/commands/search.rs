//! Locally-optimal hyperparameter search with training runs as the oracle.

use crate::config::{grid_from, parse_seed_point, ExperimentConfig};
use anyhow::{anyhow, bail, Result};
use desklab_core::hypersearch::SearchTranscript;
use desklab_core::workspace::{Recipe, Workspace};

pub fn parse_recipe(s: &str) -> Result<Recipe> {
    match s {
        "standard" => Ok(Recipe::Standard),
        "regularized" => Ok(Recipe::Regularized),
        _ => bail!("unknown search recipe '{s}' (standard | regularized)"),
    }
}

pub fn cmd_search(ws: &mut Workspace, cfg: &ExperimentConfig) -> Result<SearchTranscript> {
    let section = cfg.search.as_ref().ok_or_else(|| anyhow!("config has no [search] section"))?;
    let model = section.model.resolve()?;
    let recipe = parse_recipe(&section.recipe)?;
    let axes = grid_from(ws, &section.grid, &section.axes)?;
    let search_axes = match recipe {
        Recipe::Standard => axes.with_fixed_wd(0.1),
        Recipe::Regularized => axes.clone(),
    };
    let seed_point = section
        .seed_point
        .as_ref()
        .map(|sp| parse_seed_point(&search_axes, sp))
        .transpose()?;
    let transcript = ws.search_recipe(
        section.d,
        &model,
        recipe,
        &axes,
        seed_point,
        section.budget,
        section.init_seed,
        section.data_seed,
    )?;
    let opt = &transcript.optimum;
    let fresh = transcript.events.iter().filter(|e| !e.cached).count();
    println!(
        "{} search over d={} n={}: {} evaluations ({} fresh)",
        section.recipe,
        section.d,
        model.param_count(),
        transcript.events.len(),
        fresh
    );
    println!(
        "{} optimum: lr={} epochs={} wd={} batch={} -> loss {:.6}",
        if opt.certified { "certified" } else { "UNCERTIFIED (budget exhausted)" },
        opt.hyper.peak_lr,
        opt.hyper.epochs,
        opt.hyper.weight_decay,
        opt.hyper.batch_size,
        opt.loss
    );
    for (p, l) in &opt.neighbor_losses {
        println!("  neighbor {:?} -> {:.6}", p, l);
    }
    Ok(transcript)
}
