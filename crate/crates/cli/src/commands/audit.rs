//! Closure check: every loss a report or fit document cites must resolve to
//! a ledger line holding exactly that value.

use crate::commands::variance::VarianceReport;
use crate::reportdoc::{FitDoc, RecipeReport};
use anyhow::{bail, Result};
use desklab_core::ledger::LedgerRecord;
use desklab_core::workspace::Workspace;
use std::path::Path;

#[derive(Debug, Default)]
pub struct AuditOutcome {
    pub files: usize,
    pub checked: usize,
    pub failures: Vec<String>,
}

fn ledger_loss(ws: &Workspace, key: &str) -> Option<f64> {
    match ws.ledger.get(key)? {
        LedgerRecord::Run(r) => r.final_val_loss,
        LedgerRecord::EnsembleEval(e) => Some(e.val_loss),
    }
}

fn check_point(
    ws: &Workspace,
    file: &Path,
    what: &str,
    key: &Option<String>,
    loss: f64,
    out: &mut AuditOutcome,
) {
    let Some(key) = key else { return };
    out.checked += 1;
    match ledger_loss(ws, key) {
        None => out.failures.push(format!(
            "{}: {what} references {key} which is not in the ledger",
            file.display()
        )),
        Some(l) if l.to_bits() != loss.to_bits() => out.failures.push(format!(
            "{}: {what} claims {loss} for {key} but the ledger holds {l}",
            file.display()
        )),
        Some(_) => {}
    }
}

fn audit_recipe_report(ws: &Workspace, file: &Path, rep: &RecipeReport, out: &mut AuditOutcome) {
    for (i, p) in rep.points.iter().enumerate() {
        check_point(ws, file, &format!("point {i}"), &p.ledger_key, p.loss, out);
    }
    for fit in &rep.fits {
        for (i, &(_, loss)) in fit.fit.points.iter().enumerate() {
            let key = fit.point_keys.get(i).cloned().flatten();
            check_point(ws, file, &format!("fit {} point {i}", fit.name), &key, loss, out);
        }
    }
}

fn audit_variance_report(ws: &Workspace, file: &Path, rep: &VarianceReport, out: &mut AuditOutcome) {
    for (i, p) in rep.points.iter().enumerate() {
        check_point(ws, file, &format!("point {i}"), &p.ledger_key, p.loss, out);
    }
    for m in &rep.modes {
        for (key, loss) in m.member_keys.iter().zip(&m.member_losses) {
            check_point(ws, file, &format!("{} member", m.mode), &Some(key.clone()), *loss, out);
        }
        for (_, loss, key) in &m.k_sweep {
            check_point(ws, file, &format!("{} ensemble", m.mode), &Some(key.clone()), *loss, out);
        }
    }
}

fn audit_fit_doc(ws: &Workspace, file: &Path, doc: &FitDoc, out: &mut AuditOutcome) {
    if let FitDoc::Law(f) = doc {
        for (i, &(_, loss)) in f.fit.points.iter().enumerate() {
            let key = f.point_keys.get(i).cloned().flatten();
            check_point(ws, file, &format!("fit point {i}"), &key, loss, out);
        }
    }
}

pub fn cmd_audit(ws: &Workspace) -> Result<AuditOutcome> {
    let mut out = AuditOutcome::default();
    let mut scan = |dir: &Path, is_fit: bool| -> Result<()> {
        if !dir.exists() {
            return Ok(());
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = std::fs::read(&path)?;
            out.files += 1;
            if is_fit {
                if let Ok(doc) = serde_json::from_slice::<FitDoc>(&bytes) {
                    audit_fit_doc(ws, &path, &doc, &mut out);
                    continue;
                }
            }
            if let Ok(rep) = serde_json::from_slice::<RecipeReport>(&bytes) {
                audit_recipe_report(ws, &path, &rep, &mut out);
            } else if let Ok(rep) = serde_json::from_slice::<VarianceReport>(&bytes) {
                audit_variance_report(ws, &path, &rep, &mut out);
            } else {
                out.failures.push(format!("{}: not a recognized report document", path.display()));
            }
            Ok::<(), anyhow::Error>(())?;
        }
        Ok(())
    };
    scan(&ws.reports_dir(), false)?;
    scan(&ws.fits_dir(), true)?;

    println!(
        "audit: {} files, {} ledger-backed values checked, {} failures",
        out.files,
        out.checked,
        out.failures.len()
    );
    for f in &out.failures {
        eprintln!("  FAIL {f}");
    }
    if !out.failures.is_empty() {
        bail!("audit failed with {} violations", out.failures.len());
    }
    Ok(out)
}
