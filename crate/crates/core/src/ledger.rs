//! Append-only JSON-lines ledger: one record per completed run or ensemble
//! evaluation, keyed by a digest of the run spec. The ledger is the cache
//! (a spec that already has a line is never retrained) and the source of
//! truth every report must trace back to.
//!
//! Line format (field order is fixed by the struct declarations below):
//! run records carry `kind, ledger_key, d, n_params, k, lr, epochs, wd,
//! batch, init_seed, data_seed, status, final_val_loss, final_train_loss,
//! tokens_seen, recipe_tag, pool_hash, config, loss_curve, failed_step,
//! provenance`; ensemble records carry `kind, ledger_key, member_keys, k,
//! d, n_params, total_params, val_loss, recipe_tag`.

use crate::model::ModelConfig;
use crate::trainer::{CurvePoint, Hyper, RunSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger line {line} is not valid JSON: {source}")]
    BadLine { line: usize, source: serde_json::Error },
    #[error("record {0} already exists with different content")]
    Conflict(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Digest of a spec, hex sha-256 over the canonical JSON with a kind prefix.
pub fn key_for<T: Serialize>(kind: &str, spec: &T) -> String {
    let json = serde_json::to_string(spec).expect("spec serializes");
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update(b":");
    h.update(json.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Where a distilled run's synthetic tokens came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillProvenance {
    pub teacher_keys: Vec<String>,
    pub synth_pool_hash: String,
    pub temperature: f64,
    pub sample_seed: u64,
    pub member_sampling_mode: String,
    pub mixing_ratio: (u32, u32),
    pub synth_epoch_cap: u32,
}

/// One completed (or failed) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub ledger_key: String,
    pub d: u64,
    pub n_params: u64,
    /// Member count; always 1 for a single training run.
    pub k: u32,
    pub lr: f64,
    pub epochs: u32,
    pub wd: f64,
    pub batch: u32,
    pub init_seed: u64,
    pub data_seed: u64,
    pub status: RunStatus,
    pub final_val_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub tokens_seen: u64,
    pub recipe_tag: String,
    pub pool_hash: String,
    pub config: ModelConfig,
    pub loss_curve: Vec<CurvePoint>,
    /// Step index of the non-finite abort, for failed runs.
    pub failed_step: Option<u64>,
    pub provenance: Option<DistillProvenance>,
}

impl RunRecord {
    pub fn spec(&self) -> RunSpec {
        RunSpec {
            pool_hash: self.pool_hash.clone(),
            d_tokens: self.d,
            config: self.config.clone(),
            hyper: Hyper {
                peak_lr: self.lr,
                epochs: self.epochs,
                weight_decay: self.wd,
                batch_size: self.batch,
            },
            init_seed: self.init_seed,
            data_seed: self.data_seed,
            recipe_tag: self.recipe_tag.clone(),
        }
    }

    /// Validation loss with divergent runs treated as infinitely bad.
    pub fn loss_or_inf(&self) -> f64 {
        match self.status {
            RunStatus::Ok => self.final_val_loss.expect("ok runs have a loss"),
            RunStatus::Failed => f64::INFINITY,
        }
    }
}

/// One ensemble evaluation over existing member runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub ledger_key: String,
    /// Sorted member run keys; the reduction order during evaluation.
    pub member_keys: Vec<String>,
    pub k: u32,
    pub d: u64,
    pub n_params: u64,
    pub total_params: u64,
    pub val_loss: f64,
    pub recipe_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)] // run records carry loss curves by design
pub enum LedgerRecord {
    Run(RunRecord),
    EnsembleEval(EnsembleRecord),
}

impl LedgerRecord {
    pub fn key(&self) -> &str {
        match self {
            LedgerRecord::Run(r) => &r.ledger_key,
            LedgerRecord::EnsembleEval(e) => &e.ledger_key,
        }
    }
}

/// The ledger file plus an in-memory index. A single `Ledger` value is the
/// one writer; appends hit disk immediately.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    index: HashMap<String, usize>,
    records: Vec<LedgerRecord>,
}

impl Ledger {
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let mut ledger =
            Ledger { path: path.to_path_buf(), index: HashMap::new(), records: Vec::new() };
        if path.exists() {
            let file = std::io::BufReader::new(std::fs::File::open(path)?);
            for (i, line) in file.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LedgerRecord = serde_json::from_str(&line)
                    .map_err(|source| LedgerError::BadLine { line: i + 1, source })?;
                ledger.index.insert(rec.key().to_string(), ledger.records.len());
                ledger.records.push(rec);
            }
        }
        Ok(ledger)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&LedgerRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn get_run(&self, key: &str) -> Option<&RunRecord> {
        match self.get(key) {
            Some(LedgerRecord::Run(r)) => Some(r),
            _ => None,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &LedgerRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append a record. Re-appending an identical record is a no-op; a
    /// different record under an existing key is a conflict.
    pub fn append(&mut self, rec: LedgerRecord) -> Result<(), LedgerError> {
        if let Some(existing) = self.get(rec.key()) {
            if *existing == rec {
                return Ok(());
            }
            return Err(LedgerError::Conflict(rec.key().to_string()));
        }
        let line = serde_json::to_string(&rec).expect("record serializes");
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        self.index.insert(rec.key().to_string(), self.records.len());
        self.records.push(rec);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tag: &str, loss: f64) -> RunRecord {
        let cfg = ModelConfig::desk();
        let mut r = RunRecord {
            ledger_key: String::new(),
            d: 1000,
            n_params: cfg.param_count() as u64,
            k: 1,
            lr: 1e-3,
            epochs: 4,
            wd: 0.1,
            batch: 16,
            init_seed: 1,
            data_seed: 2,
            status: RunStatus::Ok,
            final_val_loss: Some(loss),
            final_train_loss: Some(loss - 0.5),
            tokens_seen: 4000,
            recipe_tag: tag.to_string(),
            pool_hash: "abc".into(),
            config: cfg,
            loss_curve: vec![],
            failed_step: None,
            provenance: None,
        };
        r.ledger_key = key_for("run", &r.spec());
        r
    }

    #[test]
    fn key_is_pure_function_of_spec() {
        let a = record("x", 3.0);
        let b = record("x", 9.0); // same spec, different outcome
        assert_eq!(key_for("run", &a.spec()), key_for("run", &b.spec()));
        let c = record("y", 3.0);
        assert_ne!(a.ledger_key, c.ledger_key);
        assert_ne!(key_for("run", &a.spec()), key_for("ensemble", &a.spec()));
    }

    #[test]
    fn append_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let mut ledger = Ledger::open(&path).unwrap();
        let r1 = record("a", 3.5);
        let r2 = record("b", 3.2);
        ledger.append(LedgerRecord::Run(r1.clone())).unwrap();
        ledger.append(LedgerRecord::Run(r2.clone())).unwrap();
        // idempotent re-append
        ledger.append(LedgerRecord::Run(r1.clone())).unwrap();
        assert_eq!(ledger.len(), 2);

        let reloaded = Ledger::open(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get_run(&r1.ledger_key).unwrap(), &r1);
        assert_eq!(reloaded.get_run(&r2.ledger_key).unwrap(), &r2);
    }

    #[test]
    fn conflicting_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let mut ledger = Ledger::open(&path).unwrap();
        let a = record("a", 3.5);
        let mut b = a.clone();
        b.final_val_loss = Some(1.0);
        ledger.append(LedgerRecord::Run(a)).unwrap();
        assert!(matches!(ledger.append(LedgerRecord::Run(b)), Err(LedgerError::Conflict(_))));
    }

    #[test]
    fn failed_runs_compare_as_infinite() {
        let mut r = record("a", 3.5);
        r.status = RunStatus::Failed;
        r.final_val_loss = None;
        r.failed_step = Some(17);
        assert!(r.loss_or_inf().is_infinite());
    }
}
