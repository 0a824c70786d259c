//! A workspace owns one ingested source, a frozen validation set, the
//! append-only ledger, and the checkpoints directory. Training goes through
//! the workspace so every run is cached by its spec digest and every
//! reported number can be traced back to a ledger line.

use crate::corpus::{CorpusError, TokenizerSpec, TokenPool, ValidationSet};
use crate::hypersearch::{
    coordinate_descent, GridAxes, GridPoint, SearchError, SearchTranscript,
};
use crate::ledger::{key_for, Ledger, LedgerError, LedgerRecord, RunRecord, RunStatus};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelConfig, ModelError, Parameters};
use crate::trainer::{execute_run, mean_std, Hyper, RunSpec, SeedMode, TrainError, TrainKnobs};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum WsError {
    #[error("workspace already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("not a workspace (missing {0})")]
    NotAWorkspace(PathBuf),
    #[error("source too small: need {needed} tokens, have {available}")]
    SourceTooSmall { needed: usize, available: usize },
    #[error("pool hash in spec does not match workspace pool for d={d}")]
    PoolMismatch { d: u64 },
    #[error("validation set changed since workspace creation")]
    ValidationMutated,
    #[error("no ledger record for member key {0}")]
    MissingMember(String),
    #[error("ensemble members disagree: {0}")]
    EnsembleMismatch(String),
    #[error("no checkpoint stored for run {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("bad workspace file {path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Workspace-wide policy: tokenizer, window length, validation size, the
/// default desk model, and named grid presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub tokenizer: TokenizerSpec,
    pub context_len: usize,
    pub val_windows: usize,
    pub default_batch: u32,
    pub knobs: TrainKnobs,
    pub desk_model: ModelConfig,
    pub grid_presets: BTreeMap<String, GridAxes>,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        let mut grid_presets = BTreeMap::new();
        grid_presets.insert("desk".to_string(), GridAxes::desk());
        grid_presets.insert("full".to_string(), GridAxes::full());
        WorkspaceConfig {
            tokenizer: TokenizerSpec::byte_level_with_bos(),
            context_len: 64,
            val_windows: 64,
            default_batch: 16,
            knobs: TrainKnobs::default(),
            desk_model: ModelConfig::desk(),
            grid_presets,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkspaceFile {
    config: WorkspaceConfig,
    master_pool_hash: String,
    validation_hash: String,
}

fn validation_hash(val: &ValidationSet) -> String {
    let mut h = Sha256::new();
    h.update((val.window_len as u64).to_le_bytes());
    for w in &val.windows {
        for t in w {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Which axes a hyperparameter search tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Tune lr and epochs with weight decay fixed at 0.1.
    Standard,
    /// Jointly tune lr, epochs, and weight decay.
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedVariance {
    pub mode: SeedMode,
    pub seeds: Vec<u64>,
    pub keys: Vec<String>,
    pub losses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub struct Workspace {
    root: PathBuf,
    pub config: WorkspaceConfig,
    master: TokenPool,
    validation: ValidationSet,
    pub ledger: Ledger,
}

impl Workspace {
    /// Ingest `source` (UTF-8 text as bytes): the trailing
    /// `val_windows * context_len` tokens become the frozen validation set,
    /// everything before them is the master train pool that all budgets
    /// slice prefixes from.
    pub fn create(root: &Path, source: &[u8], config: WorkspaceConfig) -> Result<Self, WsError> {
        if root.join("workspace.json").exists() {
            return Err(WsError::AlreadyExists(root.to_path_buf()));
        }
        let tokens = config.tokenizer.encode(source);
        let val_reserve = config.val_windows * config.context_len;
        if tokens.len() < val_reserve + config.context_len {
            return Err(WsError::SourceTooSmall {
                needed: val_reserve + config.context_len,
                available: tokens.len(),
            });
        }
        let split = tokens.len() - val_reserve;
        let master = TokenPool::from_tokens(tokens[..split].to_vec(), config.tokenizer.vocab_size)?;
        let windows = (0..config.val_windows)
            .map(|i| tokens[split + i * config.context_len..split + (i + 1) * config.context_len].to_vec())
            .collect();
        let validation = ValidationSet { windows, window_len: config.context_len };

        std::fs::create_dir_all(root)?;
        for sub in ["pools", "checkpoints", "synth", "transcripts", "fits", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        master.write_to(&root.join("pools").join("master.pool"))?;
        std::fs::write(
            root.join("validation.json"),
            serde_json::to_vec_pretty(&validation).expect("validation serializes"),
        )?;
        let file = WorkspaceFile {
            master_pool_hash: master.pool_hash.clone(),
            validation_hash: validation_hash(&validation),
            config,
        };
        std::fs::write(
            root.join("workspace.json"),
            serde_json::to_vec_pretty(&file).expect("config serializes"),
        )?;
        let ledger = Ledger::open(&root.join("ledger.jsonl"))?;
        Ok(Workspace { root: root.to_path_buf(), config: file.config, master, validation, ledger })
    }

    pub fn open(root: &Path) -> Result<Self, WsError> {
        let ws_path = root.join("workspace.json");
        if !ws_path.exists() {
            return Err(WsError::NotAWorkspace(ws_path));
        }
        let file: WorkspaceFile = serde_json::from_slice(&std::fs::read(&ws_path)?)
            .map_err(|e| WsError::BadFile { path: ws_path.clone(), reason: e.to_string() })?;
        let master = TokenPool::read_from(&root.join("pools").join("master.pool"))?;
        if master.pool_hash != file.master_pool_hash {
            return Err(WsError::BadFile {
                path: root.join("pools").join("master.pool"),
                reason: "master pool hash mismatch".into(),
            });
        }
        let val_path = root.join("validation.json");
        let validation: ValidationSet = serde_json::from_slice(&std::fs::read(&val_path)?)
            .map_err(|e| WsError::BadFile { path: val_path, reason: e.to_string() })?;
        if validation_hash(&validation) != file.validation_hash {
            return Err(WsError::ValidationMutated);
        }
        let ledger = Ledger::open(&root.join("ledger.jsonl"))?;
        Ok(Workspace { root: root.to_path_buf(), config: file.config, master, validation, ledger })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn validation(&self) -> &ValidationSet {
        &self.validation
    }

    pub fn master_tokens(&self) -> usize {
        self.master.size_d()
    }

    /// The train pool for budget `d`: the first `d` tokens of the master
    /// pool, so smaller budgets nest inside larger ones.
    pub fn pool(&self, d: u64) -> Result<TokenPool, WsError> {
        Ok(self.master.prefix(d as usize)?)
    }

    /// Write the budget-`d` pool in the binary pool format and return the path.
    pub fn export_pool(&self, d: u64) -> Result<PathBuf, WsError> {
        let pool = self.pool(d)?;
        let path = self.root.join("pools").join(format!("d{d}.pool"));
        pool.write_to(&path)?;
        Ok(path)
    }

    pub fn run_spec(
        &self,
        d: u64,
        config: ModelConfig,
        hyper: Hyper,
        init_seed: u64,
        data_seed: u64,
        recipe_tag: &str,
    ) -> Result<RunSpec, WsError> {
        let pool = self.pool(d)?;
        Ok(RunSpec {
            pool_hash: pool.pool_hash,
            d_tokens: d,
            config,
            hyper,
            init_seed,
            data_seed,
            recipe_tag: recipe_tag.to_string(),
        })
    }

    pub fn checkpoint_path(&self, key: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{key}.ckpt"))
    }

    pub fn load_params(&self, key: &str) -> Result<Parameters<f32>, WsError> {
        let rec = self.ledger.get_run(key).ok_or_else(|| WsError::MissingMember(key.into()))?;
        let path = self.checkpoint_path(key);
        if !path.exists() {
            return Err(WsError::MissingCheckpoint(key.into()));
        }
        let (params, meta) = load_checkpoint(&path)?;
        debug_assert_eq!(meta.config, rec.config);
        Ok(params)
    }

    /// Train per `spec`, or return the cached record if this exact spec has
    /// already run (including cached failures). Divergent runs are recorded
    /// as failed with the aborting step, not raised.
    pub fn train(&mut self, spec: &RunSpec) -> Result<RunRecord, WsError> {
        let key = key_for("run", spec);
        if let Some(rec) = self.ledger.get_run(&key) {
            return Ok(rec.clone());
        }
        let pool = self.pool(spec.d_tokens)?;
        if pool.pool_hash != spec.pool_hash {
            return Err(WsError::PoolMismatch { d: spec.d_tokens });
        }
        let n_params = spec.config.param_count() as u64;
        let record = match execute_run(spec, &pool, &self.validation, &self.config.knobs) {
            Ok((stats, params)) => {
                let meta = CheckpointMeta {
                    config: spec.config.clone(),
                    init_seed: spec.init_seed,
                    step: stats.steps,
                };
                save_checkpoint(&params, &meta, &self.checkpoint_path(&key))?;
                RunRecord {
                    ledger_key: key.clone(),
                    d: spec.d_tokens,
                    n_params,
                    k: 1,
                    lr: spec.hyper.peak_lr,
                    epochs: spec.hyper.epochs,
                    wd: spec.hyper.weight_decay,
                    batch: spec.hyper.batch_size,
                    init_seed: spec.init_seed,
                    data_seed: spec.data_seed,
                    status: RunStatus::Ok,
                    final_val_loss: Some(stats.final_val_loss),
                    final_train_loss: Some(stats.final_train_loss),
                    tokens_seen: stats.tokens_seen,
                    recipe_tag: spec.recipe_tag.clone(),
                    pool_hash: spec.pool_hash.clone(),
                    config: spec.config.clone(),
                    loss_curve: stats.loss_curve,
                    failed_step: None,
                    provenance: None,
                }
            }
            Err(TrainError::NonFinite { step }) => RunRecord {
                ledger_key: key.clone(),
                d: spec.d_tokens,
                n_params,
                k: 1,
                lr: spec.hyper.peak_lr,
                epochs: spec.hyper.epochs,
                wd: spec.hyper.weight_decay,
                batch: spec.hyper.batch_size,
                init_seed: spec.init_seed,
                data_seed: spec.data_seed,
                status: RunStatus::Failed,
                final_val_loss: None,
                final_train_loss: None,
                tokens_seen: 0,
                recipe_tag: spec.recipe_tag.clone(),
                pool_hash: spec.pool_hash.clone(),
                config: spec.config.clone(),
                loss_curve: vec![],
                failed_step: Some(step),
                provenance: None,
            },
            Err(e) => return Err(e.into()),
        };
        self.ledger.append(LedgerRecord::Run(record.clone()))?;
        Ok(record)
    }

    /// Append a pre-built record (used by distillation, which owns its own
    /// training loop but shares the ledger and checkpoint store).
    pub fn insert_run_record(
        &mut self,
        record: RunRecord,
        params: Option<&Parameters<f32>>,
    ) -> Result<(), WsError> {
        if let Some(p) = params {
            let meta = CheckpointMeta {
                config: record.config.clone(),
                init_seed: record.init_seed,
                step: 0,
            };
            save_checkpoint(p, &meta, &self.checkpoint_path(&record.ledger_key))?;
        }
        self.ledger.append(LedgerRecord::Run(record))?;
        Ok(())
    }

    /// Coordinate-descent search with the validation loss of fresh training
    /// runs as the oracle. The transcript is written under `transcripts/`.
    #[allow(clippy::too_many_arguments)]
    pub fn search_recipe(
        &mut self,
        d: u64,
        config: &ModelConfig,
        recipe: Recipe,
        axes: &GridAxes,
        seed_point: Option<GridPoint>,
        budget: usize,
        init_seed: u64,
        data_seed: u64,
    ) -> Result<SearchTranscript, WsError> {
        let (axes, tag) = match recipe {
            Recipe::Standard => (axes.with_fixed_wd(0.1), "standard"),
            Recipe::Regularized => (axes.clone(), "regularized"),
        };
        let mut seed_point = seed_point.unwrap_or_else(|| axes.midpoint());
        seed_point.wd = seed_point.wd.min(axes.wd.len() - 1);
        let default_batch = self.config.default_batch;
        let mut train_err: Option<WsError> = None;
        let transcript = {
            let ws = std::cell::RefCell::new(&mut *self);
            let oracle = |_p: &GridPoint, hyper: &Hyper| -> f64 {
                let mut ws = ws.borrow_mut();
                let spec = match ws.run_spec(d, config.clone(), hyper.clone(), init_seed, data_seed, tag)
                {
                    Ok(s) => s,
                    Err(e) => {
                        train_err.get_or_insert(e);
                        return f64::INFINITY;
                    }
                };
                match ws.train(&spec) {
                    Ok(rec) => rec.loss_or_inf(),
                    Err(e) => {
                        train_err.get_or_insert(e);
                        f64::INFINITY
                    }
                }
            };
            coordinate_descent(&axes, oracle, seed_point, default_batch, budget)?
        };
        if let Some(e) = train_err {
            return Err(e);
        }
        let name = format!("{tag}-d{d}-n{}.json", config.param_count());
        std::fs::write(
            self.root.join("transcripts").join(name),
            serde_json::to_vec_pretty(&transcript).expect("transcript serializes"),
        )?;
        Ok(transcript)
    }

    /// Train variants of `spec` that differ only in the seed axes selected
    /// by `mode`, and report the sample mean/std of final validation loss.
    pub fn seed_variance(
        &mut self,
        spec: &RunSpec,
        mode: SeedMode,
        seeds: &[u64],
    ) -> Result<SeedVariance, WsError> {
        assert!(seeds.len() >= 2, "need at least two seeds");
        let mut losses = Vec::with_capacity(seeds.len());
        let mut keys = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let variant = mode.apply(spec, s);
            let rec = self.train(&variant)?;
            keys.push(rec.ledger_key.clone());
            losses.push(rec.loss_or_inf());
        }
        let (mean, std) = mean_std(&losses);
        Ok(SeedVariance { mode, seeds: seeds.to_vec(), keys, losses, mean, std })
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn fits_dir(&self) -> PathBuf {
        self.root.join("fits")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}
