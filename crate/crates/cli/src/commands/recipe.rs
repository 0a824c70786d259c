//! End-to-end recipes over (D, N) grids: certified searches, parameter
//! laws and their asymptotes, member-count laws, the nested joint limit,
//! and the distillation pipeline. Each run produces a report document whose
//! every trained number cites its ledger line.

use crate::commands::distill::build_spec;
use crate::config::{grid_from, ExperimentConfig, RecipeSection};
use crate::pipeline::{fit_k_law, prefix_ensembles, train_members};
use crate::plot::plot_fit;
use crate::reportdoc::{laws_csv, points_csv, NamedFit, RecipeReport, ReportPoint};
use anyhow::{anyhow, bail, Result};
use desklab_core::distill::{distill_train, train_on_synthetic_only};
use desklab_core::ensemble::heuristic_ensemble_hyper;
use desklab_core::hypersearch::CertifiedOptimum;
use desklab_core::ledger::key_for;
use desklab_core::model::ModelConfig;
use desklab_core::scalinglaw::{fit_power_law, tiered_fit, FitOptions, TierAxis, TierPoint};
use desklab_core::workspace::{Recipe, Workspace};
use std::collections::BTreeMap;

fn axes_map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Search at one (d, model) and return the optimum plus the ledger key of
/// the winning run.
#[allow(clippy::too_many_arguments)]
fn search_point(
    ws: &mut Workspace,
    d: u64,
    model: &ModelConfig,
    recipe: Recipe,
    section: &RecipeSection,
    axes: &desklab_core::hypersearch::GridAxes,
) -> Result<(CertifiedOptimum, String)> {
    let transcript = ws.search_recipe(
        d,
        model,
        recipe,
        axes,
        None,
        section.budget,
        section.init_seed,
        section.data_seed,
    )?;
    let opt = transcript.optimum;
    if !opt.certified {
        eprintln!("warning: search at d={d} n={} exhausted its budget uncertified", model.param_count());
    }
    let tag = match recipe {
        Recipe::Standard => "standard",
        Recipe::Regularized => "regularized",
    };
    let spec = ws.run_spec(
        d,
        model.clone(),
        opt.hyper.clone(),
        section.init_seed,
        section.data_seed,
        tag,
    )?;
    let key = key_for("run", &spec);
    Ok((opt, key))
}

pub fn cmd_recipe(ws: &mut Workspace, cfg: &ExperimentConfig) -> Result<RecipeReport> {
    let section = cfg.recipe.as_ref().ok_or_else(|| anyhow!("config has no [recipe] section"))?;
    let ds = section.d.values();
    let models: Vec<ModelConfig> =
        section.models.iter().map(|m| m.resolve()).collect::<Result<_>>()?;
    if ds.is_empty() || models.is_empty() {
        bail!("[recipe] needs at least one d and one model");
    }
    let grid = grid_from(ws, &section.grid, &section.axes)?;
    let options = FitOptions::default();
    let mut report = RecipeReport::new(&section.name, &section.kind);

    match section.kind.as_str() {
        // best tuned single model per (D, N) with weight decay pinned to 0.1
        "standard" => {
            let mut best_per_d: Vec<(f64, f64, String)> = Vec::new();
            for &d in &ds {
                let mut best: Option<(f64, String)> = None;
                for model in &models {
                    let (opt, key) =
                        search_point(ws, d, model, Recipe::Standard, section, &grid)?;
                    report.points.push(ReportPoint {
                        axes: axes_map(&[("d", d as f64), ("n", model.param_count() as f64)]),
                        loss: opt.loss,
                        ledger_key: Some(key.clone()),
                    });
                    if best.as_ref().map(|(l, _)| opt.loss < *l).unwrap_or(true) {
                        best = Some((opt.loss, key));
                    }
                }
                let (loss, key) = best.expect("at least one model");
                best_per_d.push((d as f64, loss, key));
            }
            if best_per_d.len() >= 3 {
                let pts: Vec<(f64, f64)> = best_per_d.iter().map(|&(d, l, _)| (d, l)).collect();
                let fit = fit_power_law(&pts, &options)?;
                report.fits.push(NamedFit {
                    name: format!("{}-data-law", section.name),
                    x_axis: "tokens".into(),
                    fit,
                    point_keys: best_per_d.iter().map(|(_, _, k)| Some(k.clone())).collect(),
                });
            }
        }

        // jointly tuned (lr, epochs, wd) per (D, N); parameter law per D,
        // then a data law over the asymptotes
        "regularized" => {
            let mut asymptotes: Vec<(f64, f64)> = Vec::new();
            for &d in &ds {
                let mut n_points: Vec<(f64, f64)> = Vec::new();
                let mut n_keys: Vec<Option<String>> = Vec::new();
                for model in &models {
                    let (opt, key) =
                        search_point(ws, d, model, Recipe::Regularized, section, &grid)?;
                    report.points.push(ReportPoint {
                        axes: axes_map(&[("d", d as f64), ("n", model.param_count() as f64)]),
                        loss: opt.loss,
                        ledger_key: Some(key.clone()),
                    });
                    n_points.push((model.param_count() as f64, opt.loss));
                    n_keys.push(Some(key));
                }
                if n_points.len() >= 3 {
                    let fit = fit_power_law(&n_points, &options)?;
                    asymptotes.push((d as f64, fit.e));
                    report.fits.push(NamedFit {
                        name: format!("{}-nlaw-d{d}", section.name),
                        x_axis: "params".into(),
                        fit,
                        point_keys: n_keys,
                    });
                }
            }
            if asymptotes.len() >= 3 {
                let fit = fit_power_law(&asymptotes, &options)?;
                report.fits.push(NamedFit {
                    name: format!("{}-data-law", section.name),
                    x_axis: "tokens".into(),
                    fit,
                    point_keys: asymptotes.iter().map(|_| None).collect(),
                });
            }
        }

        // members at the heuristic ensemble hyperparameters, K swept, and a
        // member-count law per (D, N)
        "ensemble" | "joint" => {
            let mut tier_points: Vec<TierPoint> = Vec::new();
            for &d in &ds {
                for model in &models {
                    let (opt, _) =
                        search_point(ws, d, model, Recipe::Regularized, section, &grid)?;
                    let heur = heuristic_ensemble_hyper(&opt.hyper, &grid);
                    if heur.epochs_clamped || heur.wd_snapped {
                        eprintln!(
                            "note: heuristic hyper clamped/snapped at d={d} n={} (epochs_clamped={}, wd_snapped={})",
                            model.param_count(),
                            heur.epochs_clamped,
                            heur.wd_snapped
                        );
                    }
                    let tag = format!("{}-members-d{d}-n{}", section.name, model.param_count());
                    let members = train_members(
                        ws,
                        d,
                        model,
                        &heur.hyper,
                        section.k_max,
                        section.init_seed,
                        &tag,
                    )?;
                    let keys: Vec<String> =
                        members.iter().map(|m| m.ledger_key.clone()).collect();
                    let ens = prefix_ensembles(ws, &keys, model)?;
                    for rec in &ens {
                        report.points.push(ReportPoint {
                            axes: axes_map(&[
                                ("d", d as f64),
                                ("n", model.param_count() as f64),
                                ("k", rec.k as f64),
                            ]),
                            loss: rec.val_loss,
                            ledger_key: Some(rec.ledger_key.clone()),
                        });
                        tier_points.push(TierPoint {
                            coords: vec![
                                rec.k as f64,
                                model.param_count() as f64,
                                d as f64,
                            ],
                            loss: rec.val_loss,
                        });
                    }
                    if ens.len() >= 3 {
                        let name =
                            format!("{}-klaw-d{d}-n{}", section.name, model.param_count());
                        report.fits.push(fit_k_law(&ens, &name, &options)?);
                    }
                }
            }
            if section.kind == "joint" {
                // nested limits: K innermost, then N, then D when present
                let trim = |p: &TierPoint, n: usize| TierPoint {
                    coords: p.coords[..n].to_vec(),
                    loss: p.loss,
                };
                let tf = if ds.len() >= 3 && models.len() >= 3 {
                    tiered_fit(
                        &tier_points,
                        &[TierAxis::Members, TierAxis::Params, TierAxis::Tokens],
                        &options,
                    )?
                } else if models.len() >= 3 {
                    let d0 = ds[0] as f64;
                    let pts: Vec<TierPoint> = tier_points
                        .iter()
                        .filter(|p| p.coords[2] == d0)
                        .map(|p| trim(p, 2))
                        .collect();
                    tiered_fit(&pts, &[TierAxis::Members, TierAxis::Params], &options)?
                } else {
                    bail!("joint recipe needs at least 3 models (and 3 token budgets for the data tier)");
                };
                println!("joint asymptote: {:.6}", tf.final_asymptote);
                report.tiered = Some(tf);
            }
        }

        // teacher tokens mixed into a fresh student, with the token-matched
        // synthetic-only control
        "distill" => {
            let dsec = section
                .distill
                .as_ref()
                .ok_or_else(|| anyhow!("[recipe] kind=distill needs a [recipe.distill] table"))?;
            let spec = build_spec(ws, dsec)?;
            let mixed = distill_train(ws, &spec)?;
            report.points.push(ReportPoint {
                axes: axes_map(&[("d", spec.d_tokens as f64), ("mixed", 1.0)]),
                loss: mixed.final_val_loss.unwrap_or(f64::INFINITY),
                ledger_key: Some(mixed.ledger_key.clone()),
            });
            if dsec.no_mix_control {
                let control = train_on_synthetic_only(ws, &spec, mixed.tokens_seen)?;
                report.points.push(ReportPoint {
                    axes: axes_map(&[("d", spec.d_tokens as f64), ("mixed", 0.0)]),
                    loss: control.final_val_loss.unwrap_or(f64::INFINITY),
                    ledger_key: Some(control.ledger_key.clone()),
                });
            }
            // teacher members for comparison
            for key in &spec.teacher.member_keys {
                if let Some(rec) = ws.ledger.get_run(key) {
                    if let Some(loss) = rec.final_val_loss {
                        report.points.push(ReportPoint {
                            axes: axes_map(&[("d", rec.d as f64), ("teacher", 1.0)]),
                            loss,
                            ledger_key: Some(key.clone()),
                        });
                    }
                }
            }
        }

        other => bail!("unknown recipe kind '{other}' (standard | regularized | ensemble | joint | distill)"),
    }

    // artifacts
    let dir = ws.reports_dir();
    let base = &section.name;
    let pts_path = dir.join(format!("{base}-points.csv"));
    std::fs::write(&pts_path, points_csv(&report.points))?;
    report.artifacts.push(pts_path.display().to_string());
    if !report.fits.is_empty() {
        let laws_path = dir.join(format!("{base}-laws.csv"));
        std::fs::write(&laws_path, laws_csv(&report.fits))?;
        report.artifacts.push(laws_path.display().to_string());
        for f in &report.fits {
            let svg_path = dir.join(format!("{base}-{}.svg", f.name));
            std::fs::write(&svg_path, plot_fit(&f.fit, &f.name, &f.x_axis))?;
            report.artifacts.push(svg_path.display().to_string());
        }
    }
    let json_path = dir.join(format!("{base}.json"));
    report.write_json(&json_path)?;
    println!("recipe report written to {}", json_path.display());
    Ok(report)
}
