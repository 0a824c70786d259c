//! Fit power laws to points from a CSV file: one column per tier axis
//! (innermost first) plus a `loss` column. A single axis gives a plain law;
//! several give the nested tiered fit.

use crate::config::{parse_tier_axes, ExperimentConfig};
use crate::plot::plot_fit;
use crate::reportdoc::{FitDoc, NamedFit};
use anyhow::{anyhow, bail, Context, Result};
use desklab_core::scalinglaw::{fit_power_law, tiered_fit, FitOptions, TierPoint};
use desklab_core::workspace::Workspace;
use std::path::Path;

pub fn read_points_csv(path: &Path, axes: &[String]) -> Result<Vec<TierPoint>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read csv {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> =
        lines.next().ok_or_else(|| anyhow!("empty csv"))?.split(',').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| anyhow!("csv missing column '{name}' (header: {header:?})"))
    };
    let axis_cols: Vec<usize> = axes.iter().map(|a| col(a)).collect::<Result<_>>()?;
    let loss_col = col("loss")?;
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |c: usize| -> Result<f64> {
            fields
                .get(c)
                .ok_or_else(|| anyhow!("row {}: missing column {c}", i + 2))?
                .parse::<f64>()
                .map_err(|e| anyhow!("row {}: {e}", i + 2))
        };
        let coords: Vec<f64> = axis_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?;
        points.push(TierPoint { coords, loss: parse(loss_col)? });
    }
    Ok(points)
}

pub fn cmd_fit(ws: &Workspace, cfg: &ExperimentConfig, config_dir: &Path) -> Result<FitDoc> {
    let section = cfg.fit.as_ref().ok_or_else(|| anyhow!("config has no [fit] section"))?;
    if section.axes.is_empty() {
        bail!("[fit] axes must name at least one axis");
    }
    let tier_axes = parse_tier_axes(&section.axes)?;
    let csv_path = config_dir.join(&section.csv);
    let csv_path = if csv_path.exists() { csv_path } else { Path::new(&section.csv).to_path_buf() };
    let points = read_points_csv(&csv_path, &section.axes)?;
    let mut options = FitOptions::default();
    if let Some(g) = section.initial_guess {
        options.initial_guess = g;
    }

    let doc = if tier_axes.len() == 1 {
        let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.coords[0], p.loss)).collect();
        let fit = fit_power_law(&pts, &options)?;
        println!(
            "{}: A={:.6} alpha={:.6} E={:.6} sse={:.3e}{}",
            section.name,
            fit.a,
            fit.alpha,
            fit.e,
            fit.residual_sse,
            if fit.converged { "" } else { " NOT CONVERGED" }
        );
        let svg = plot_fit(&fit, &section.name, &section.axes[0]);
        std::fs::write(ws.reports_dir().join(format!("{}.svg", section.name)), svg)?;
        FitDoc::Law(NamedFit {
            name: section.name.clone(),
            x_axis: section.axes[0].clone(),
            fit,
            point_keys: points.iter().map(|_| None).collect(),
        })
    } else {
        let tf = tiered_fit(&points, &tier_axes, &options)?;
        if tf.nonstandard_order {
            eprintln!(
                "warning: tier order {:?} differs from the members->params->tokens nesting",
                tier_axes
            );
        }
        println!("{}: final asymptote {:.6}", section.name, tf.final_asymptote);
        for level in &tf.levels {
            for (group, fit) in &level.fits {
                println!(
                    "  {:?}[{}]: A={:.6} alpha={:.6} E={:.6}",
                    level.axis,
                    if group.is_empty() { "-" } else { group },
                    fit.a,
                    fit.alpha,
                    fit.e
                );
            }
        }
        FitDoc::Tiered { name: section.name.clone(), tiered: tf }
    };
    let path = ws.fits_dir().join(format!("{}.json", section.name));
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    println!("fit written to {}", path.display());
    Ok(doc)
}
