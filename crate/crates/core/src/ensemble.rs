//! Logit-averaged ensembles over independently trained members: the
//! ensemble distribution is proportional to exp of the mean member
//! log-probabilities, i.e. the renormalized geometric mean of member
//! distributions. Mean-of-logits is the same thing because softmax is
//! invariant to per-row shifts, and per-row log Z is exactly such a shift.
//!
//! Members are always evaluated from checkpoints; the ledger is the source
//! of truth. An ensemble of K members costs K forward passes and counts
//! N*K total parameters.

use crate::ledger::{key_for, EnsembleRecord, LedgerRecord, RunRecord};
use crate::model::{ModelConfig, ModelError, Parameters};
use crate::trainer::{eval_logitavg_loss, Hyper};
use crate::workspace::{Workspace, WsError};
use serde::{Deserialize, Serialize};

/// K member runs sharing config and hyperparameters, differing only in
/// their seeds. Keys are kept sorted so evaluation order (and therefore the
/// reduction) is independent of how the caller listed them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub member_keys: Vec<String>,
    pub member_config: ModelConfig,
}

impl EnsembleSpec {
    pub fn new(mut member_keys: Vec<String>, member_config: ModelConfig) -> Self {
        member_keys.sort();
        member_keys.dedup();
        EnsembleSpec { member_keys, member_config }
    }

    pub fn k(&self) -> u32 {
        self.member_keys.len() as u32
    }

    pub fn total_params(&self) -> u64 {
        self.member_config.param_count() as u64 * self.member_keys.len() as u64
    }

    pub fn ledger_key(&self) -> String {
        key_for("ensemble", self)
    }
}

/// Renormalized geometric mean of the member rows: softmax of the mean
/// logit row, computed in f64.
pub fn logit_avg_probs(member_logit_rows: &[&[f64]]) -> Vec<f64> {
    assert!(!member_logit_rows.is_empty(), "K must be at least 1");
    let v = member_logit_rows[0].len();
    assert!(member_logit_rows.iter().all(|r| r.len() == v));
    let k = member_logit_rows.len() as f64;
    let mut mean = vec![0.0f64; v];
    for row in member_logit_rows {
        for (m, x) in mean.iter_mut().zip(*row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= k;
    }
    let mx = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for m in mean.iter_mut() {
        *m = (*m - mx).exp();
        z += *m;
    }
    for m in mean.iter_mut() {
        *m /= z;
    }
    mean
}

fn check_members_match(members: &[&RunRecord]) -> Result<(), WsError> {
    let first = members[0];
    for m in &members[1..] {
        if m.config != first.config {
            return Err(WsError::EnsembleMismatch("model configs differ".into()));
        }
        if (m.lr, m.epochs, m.wd.to_bits(), m.batch)
            != (first.lr, first.epochs, first.wd.to_bits(), first.batch)
        {
            return Err(WsError::EnsembleMismatch("hyperparameters differ".into()));
        }
        if m.d != first.d || m.pool_hash != first.pool_hash {
            return Err(WsError::EnsembleMismatch("train pools differ".into()));
        }
        if (m.init_seed, m.data_seed) == (first.init_seed, first.data_seed) {
            return Err(WsError::EnsembleMismatch("duplicate member seeds".into()));
        }
    }
    Ok(())
}

/// Evaluate the logit-averaged ensemble on the workspace validation set and
/// ledger the result. Cached by the ensemble key; K=1 is bitwise identical
/// to the member's own evaluation path.
pub fn ensemble_eval(ws: &mut Workspace, spec: &EnsembleSpec) -> Result<EnsembleRecord, WsError> {
    let key = spec.ledger_key();
    if let Some(LedgerRecord::EnsembleEval(rec)) = ws.ledger.get(&key) {
        return Ok(rec.clone());
    }
    let member_recs: Vec<RunRecord> = spec
        .member_keys
        .iter()
        .map(|k| {
            ws.ledger
                .get_run(k)
                .cloned()
                .ok_or_else(|| WsError::MissingMember(k.clone()))
        })
        .collect::<Result<_, _>>()?;
    if spec.k() > 1 {
        check_members_match(&member_recs.iter().collect::<Vec<_>>())?;
    }
    if member_recs.iter().any(|r| r.config != spec.member_config) {
        return Err(WsError::EnsembleMismatch("spec config differs from members".into()));
    }
    let params: Vec<Parameters<f32>> = spec
        .member_keys
        .iter()
        .map(|k| ws.load_params(k))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Parameters<f32>> = params.iter().collect();
    let val_loss = eval_logitavg_loss(&refs, ws.validation(), ws.config.knobs.eval_chunk)?;
    let rec = EnsembleRecord {
        ledger_key: key,
        member_keys: spec.member_keys.clone(),
        k: spec.k(),
        d: member_recs[0].d,
        n_params: member_recs[0].n_params,
        total_params: spec.total_params(),
        val_loss,
        recipe_tag: format!("ensemble:{}", member_recs[0].recipe_tag),
    };
    ws.ledger.append(LedgerRecord::EnsembleEval(rec.clone()))?;
    Ok(rec)
}

/// Element-wise arithmetic mean of member weights (weight-space averaging,
/// in contrast to the logit-space ensemble).
pub fn soup(member_params: &[&Parameters<f32>]) -> Result<Parameters<f32>, ModelError> {
    assert!(!member_params.is_empty());
    let first = member_params[0];
    for p in member_params {
        if p.config != first.config || p.data.len() != first.data.len() {
            return Err(ModelError::ShapeMismatch("soup members differ in shape".into()));
        }
    }
    let k = member_params.len() as f64;
    let mut acc = vec![0.0f64; first.data.len()];
    for p in member_params {
        for (a, x) in acc.iter_mut().zip(&p.data) {
            *a += *x as f64;
        }
    }
    let mut out = Parameters::zeros(&first.config);
    for (o, a) in out.data.iter_mut().zip(&acc) {
        *o = (a / k) as f32;
    }
    Ok(out)
}

/// The member-hyperparameter heuristic for the K -> infinity asymptote:
/// same learning rate, double the epochs (clamped at the grid cap), half
/// the weight decay (snapped to the grid). Clamping and off-grid snapping
/// are flagged because the rule is known to fail in extreme
/// over-parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicHyper {
    pub hyper: Hyper,
    pub epochs_clamped: bool,
    pub wd_snapped: bool,
}

pub fn heuristic_ensemble_hyper(
    certified: &Hyper,
    axes: &crate::hypersearch::GridAxes,
) -> HeuristicHyper {
    let epoch_cap = *axes.epochs.last().expect("non-empty epoch axis");
    let doubled = certified.epochs.saturating_mul(2);
    let epochs = doubled.min(epoch_cap);
    let half_wd = certified.weight_decay * 0.5;
    let wd = axes.snap_wd(half_wd);
    HeuristicHyper {
        hyper: Hyper {
            peak_lr: certified.peak_lr,
            epochs,
            weight_decay: wd,
            batch_size: certified.batch_size,
        },
        epochs_clamped: doubled > epoch_cap,
        wd_snapped: wd != half_wd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersearch::GridAxes;
    use crate::model::{init_params, row_nll};
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_members_reproduce_the_member_row() {
        let row = vec![0.3f64, -1.2, 2.0, 0.0];
        let probs1 = logit_avg_probs(&[&row]);
        let probs3 = logit_avg_probs(&[&row, &row, &row]);
        for (a, b) in probs1.iter().zip(&probs3) {
            assert!((a - b).abs() < 1e-15);
        }
        let s: f64 = probs3.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_logit_shift_of_one_member_changes_nothing() {
        let a = vec![0.5f64, 1.5, -0.7];
        let b = vec![1.0f64, 0.0, 0.3];
        let b_shift: Vec<f64> = b.iter().map(|x| x + 123.0).collect();
        let p1 = logit_avg_probs(&[&a, &b]);
        let p2 = logit_avg_probs(&[&a, &b_shift]);
        for (x, y) in p1.iter().zip(&p2) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_mean_hand_value() {
        // members p1=(0.8,0.2), p2=(0.5,0.5) as log-prob logits:
        // unnormalized geometric mean (sqrt(0.4), sqrt(0.1)),
        // normalized (2/3, 1/3)
        let l1 = vec![0.8f64.ln(), 0.2f64.ln()];
        let l2 = vec![0.5f64.ln(), 0.5f64.ln()];
        let p = logit_avg_probs(&[&l1, &l2]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-6, "{p:?}");
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-6);
        let g0 = (0.8f64 * 0.5).sqrt();
        let g1 = (0.2f64 * 0.5).sqrt();
        assert!((g0 - 0.632456).abs() < 1e-6 && (g1 - 0.316228).abs() < 1e-6);
        assert!((p[0] - g0 / (g0 + g1)).abs() < 1e-12);
    }

    #[test]
    fn ensemble_nll_never_beats_mean_member_nll_backwards() {
        // Jensen: NLL_ens <= mean member NLL, on random small distributions
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let v = rng.gen_range(2..6);
            let k = rng.gen_range(1..5);
            let rows: Vec<Vec<f64>> =
                (0..k).map(|_| (0..v).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let target = rng.gen_range(0..v);
            let probs = logit_avg_probs(&refs);
            let ens_nll = -probs[target].ln();
            let mean_nll =
                rows.iter().map(|r| row_nll(r, target)).sum::<f64>() / k as f64;
            assert!(ens_nll <= mean_nll + 1e-9, "{ens_nll} vs {mean_nll}");
        }
    }

    #[test]
    fn soup_of_identical_members_is_identity_and_pairs_average() {
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            n_kv_heads: 2,
            d_ff: 32,
            context_len: 8,
            vocab_size: 17,
        };
        let a = init_params::<f32>(&cfg, 1);
        let same = soup(&[&a, &a]).unwrap();
        for (x, y) in same.data.iter().zip(&a.data) {
            assert_eq!(x, y);
        }
        let b = init_params::<f32>(&cfg, 2);
        let mid = soup(&[&a, &b]).unwrap();
        for i in 0..a.data.len() {
            let want = ((a.data[i] as f64 + b.data[i] as f64) / 2.0) as f32;
            assert_eq!(mid.data[i].to_bits(), want.to_bits());
        }
        let other = init_params::<f32>(&ModelConfig { d_model: 32, d_ff: 64, ..cfg }, 1);
        assert!(soup(&[&a, &other]).is_err());
    }

    #[test]
    fn heuristic_doubles_epochs_and_halves_wd() {
        let axes = GridAxes::full();
        let h = heuristic_ensemble_hyper(
            &Hyper { peak_lr: 3e-3, epochs: 16, weight_decay: 1.6, batch_size: 64 },
            &axes,
        );
        assert_eq!(h.hyper.peak_lr, 3e-3);
        assert_eq!(h.hyper.epochs, 32);
        assert_eq!(h.hyper.weight_decay, 0.8);
        assert!(!h.epochs_clamped && !h.wd_snapped);
    }

    #[test]
    fn heuristic_keeps_zero_wd_and_flags_epoch_clamp() {
        let axes = GridAxes::full();
        let h = heuristic_ensemble_hyper(
            &Hyper { peak_lr: 1e-3, epochs: 64, weight_decay: 0.0, batch_size: 64 },
            &axes,
        );
        assert_eq!(h.hyper.weight_decay, 0.0);
        assert_eq!(h.hyper.epochs, 64);
        assert!(h.epochs_clamped);
        assert!(!h.wd_snapped);
    }

    #[test]
    fn spec_sorts_and_dedups_members() {
        let cfg = ModelConfig::desk();
        let a = EnsembleSpec::new(vec!["b".into(), "a".into(), "b".into()], cfg.clone());
        let b = EnsembleSpec::new(vec!["a".into(), "b".into()], cfg);
        assert_eq!(a, b);
        assert_eq!(a.ledger_key(), b.ledger_key());
        assert_eq!(a.k(), 2);
    }
}
