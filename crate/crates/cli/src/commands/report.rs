//! Render fit documents into deterministic CSV tables and SVG plots, with
//! data-efficiency ratios against a named baseline law.

use crate::plot::plot_fit;
use crate::reportdoc::{
    efficiency_csv, laws_csv, points_csv, EfficiencyRow, FitDoc, NamedFit, RecipeReport,
    ReportPoint,
};
use anyhow::{bail, Result};
use desklab_core::scalinglaw::interpolate_data_requirement;
use desklab_core::workspace::Workspace;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn collect_laws(doc: &FitDoc) -> Vec<NamedFit> {
    match doc {
        FitDoc::Law(f) => vec![f.clone()],
        FitDoc::Tiered { name, tiered } => tiered
            .levels
            .iter()
            .flat_map(|level| {
                level.fits.iter().map(move |(group, fit)| NamedFit {
                    name: format!(
                        "{name}.{:?}{}",
                        level.axis,
                        if group.is_empty() { String::new() } else { format!("[{group}]") }
                    ),
                    x_axis: format!("{:?}", level.axis).to_lowercase(),
                    fit: fit.clone(),
                    point_keys: fit.points.iter().map(|_| None).collect(),
                })
            })
            .collect(),
    }
}

/// Data-efficiency rows: how much data the baseline law needs to match each
/// point of the subject law, over the data actually used.
pub fn efficiency_rows(subject: &NamedFit, baseline: &NamedFit) -> Result<Vec<EfficiencyRow>> {
    let mut rows = Vec::new();
    for &(d, loss) in &subject.fit.points {
        if loss <= baseline.fit.e {
            continue; // below the baseline asymptote: no finite data matches it
        }
        let d_prime = interpolate_data_requirement(&baseline.fit, loss)?;
        rows.push(EfficiencyRow {
            subject: subject.name.clone(),
            baseline: baseline.name.clone(),
            d,
            achieved_loss: loss,
            d_prime,
            ratio: d_prime / d,
        });
    }
    Ok(rows)
}


pub fn cmd_report(
    ws: &Workspace,
    fit_paths: &[PathBuf],
    baseline_path: Option<&Path>,
    out_name: &str,
) -> Result<RecipeReport> {
    if fit_paths.is_empty() {
        bail!("report needs at least one fit document");
    }
    let docs: Vec<FitDoc> = fit_paths.iter().map(|p| FitDoc::load(p)).collect::<Result<_>>()?;
    let baseline = baseline_path.map(FitDoc::load).transpose()?;

    let mut report = RecipeReport::new(out_name, "report");
    let mut all_laws = Vec::new();
    for doc in &docs {
        all_laws.extend(collect_laws(doc));
    }
    // points: every fitted point, keyed where the fit knows its ledger line
    for law in &all_laws {
        for (i, &(x, loss)) in law.fit.points.iter().enumerate() {
            let mut axes = BTreeMap::new();
            axes.insert(law.x_axis.clone(), x);
            report.points.push(ReportPoint {
                axes,
                loss,
                ledger_key: law.point_keys.get(i).cloned().flatten(),
            });
        }
    }

    if let Some(FitDoc::Law(base)) = &baseline {
        if base.x_axis != "tokens" {
            eprintln!(
                "warning: baseline '{}' is over '{}', data-efficiency reads x as tokens",
                base.name, base.x_axis
            );
        }
        for law in &all_laws {
            if law.name != base.name {
                report.efficiencies.extend(efficiency_rows(law, base)?);
            }
        }
        all_laws.push(base.clone());
    } else if baseline.is_some() {
        bail!("baseline must be a single law document, not a tiered fit");
    }

    let dir = ws.reports_dir();
    let laws_path = dir.join(format!("{out_name}-laws.csv"));
    std::fs::write(&laws_path, laws_csv(&all_laws))?;
    report.artifacts.push(laws_path.display().to_string());
    if !report.efficiencies.is_empty() {
        let eff_path = dir.join(format!("{out_name}-efficiency.csv"));
        std::fs::write(&eff_path, efficiency_csv(&report.efficiencies))?;
        report.artifacts.push(eff_path.display().to_string());
    }
    let pts_path = dir.join(format!("{out_name}-points.csv"));
    std::fs::write(&pts_path, points_csv(&report.points))?;
    report.artifacts.push(pts_path.display().to_string());
    for law in &all_laws {
        let safe: String = law
            .name
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let svg_path = dir.join(format!("{out_name}-{safe}.svg"));
        std::fs::write(&svg_path, plot_fit(&law.fit, &law.name, &law.x_axis))?;
        report.artifacts.push(svg_path.display().to_string());
    }
    report.fits = all_laws;
    let report_path = dir.join(format!("{out_name}.json"));
    report.write_json(&report_path)?;
    println!("report written to {}", report_path.display());
    for a in &report.artifacts {
        println!("  {a}");
    }
    Ok(report)
}
