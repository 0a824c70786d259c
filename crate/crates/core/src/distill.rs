//! Sequence-level knowledge distillation: sample a synthetic token pool
//! from a teacher (a single model or ensemble members), interleave real and
//! synthetic batches at a fixed ratio, and train a fresh student on the
//! mixture. The synthetic pool is generated (and cached) before any student
//! training starts.

use crate::corpus::{epoch_stream, make_windows, Permutation, TokenPool};
use crate::ensemble::EnsembleSpec;
use crate::ledger::{key_for, DistillProvenance, RunRecord, RunStatus};
use crate::model::{derive_seed, generate_sequences_seeded, ModelConfig, Parameters};
use crate::trainer::{train_on_stream, Hyper, TokenBatch, TrainError};
use crate::workspace::{Workspace, WsError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("mixing ratio components must be positive, got {0}:{1}")]
    BadRatio(u32, u32),
    #[error("schedule needs {needed} synthetic windows but cap {cap} x {available} windows allows only {allowed}")]
    SynthExhausted { needed: u64, available: u64, cap: u32, allowed: u64 },
    #[error("synthetic pool smaller than one context window")]
    SynthTooSmall,
    #[error(transparent)]
    Ws(#[from] Box<WsError>),
}

impl From<WsError> for DistillError {
    fn from(e: WsError) -> Self {
        DistillError::Ws(Box::new(e))
    }
}

/// How ensemble teachers produce tokens: round-robin the individual members
/// per sequence, or sample every token from the logit-averaged distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    IndividualMembers,
    AveragedEnsemble,
}

/// A full distillation experiment: teacher, synthetic budget, mixing
/// schedule, and the student run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSpec {
    pub teacher: EnsembleSpec,
    /// Synthetic token budget generated up front.
    pub synth_tokens: u64,
    /// (real : synth) gradient-batch ratio.
    pub mixing_ratio: (u32, u32),
    pub student_config: ModelConfig,
    pub student_hyper: Hyper,
    pub temperature: f64,
    pub sample_seed: u64,
    pub member_sampling_mode: SamplingMode,
    /// Maximum passes over the synthetic pool before the schedule is
    /// declared infeasible.
    pub synth_epoch_cap: u32,
    /// Real-data budget (prefix of the master pool).
    pub d_tokens: u64,
    pub init_seed: u64,
    pub data_seed: u64,
}

impl DistillSpec {
    pub fn ledger_key(&self) -> String {
        key_for("distill", self)
    }
}

/// Member index that produces sequence `i` in individual-members mode.
pub fn member_for_sequence(seq_index: usize, k: usize) -> usize {
    seq_index % k
}

/// Identity of a synthetic pool: everything generation depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub teacher_key: String,
    pub teacher_members: Vec<String>,
    pub n_tokens: u64,
    pub temperature: f64,
    pub seed: u64,
    pub mode: SamplingMode,
    pub pool_hash: String,
}

/// Sample a synthetic pool of exactly `n_tokens` from the teacher:
/// full-context sequences from the BOS start token, concatenated, with the
/// tail sequence truncated to hit the budget. Pools are cached on disk in
/// the workspace `synth/` directory next to a provenance sidecar.
pub fn generate_synthetic(
    ws: &Workspace,
    teacher: &EnsembleSpec,
    n_tokens: u64,
    temperature: f64,
    seed: u64,
    mode: SamplingMode,
) -> Result<TokenPool, DistillError> {
    let ctx = teacher.member_config.context_len;
    if (n_tokens as usize) < ctx {
        return Err(DistillError::SynthTooSmall);
    }
    let ident =
        (teacher.ledger_key(), n_tokens, temperature.to_bits(), seed, mode);
    let synth_key = key_for("synth", &ident);
    let pool_path = ws.synth_dir().join(format!("{synth_key}.pool"));
    if pool_path.exists() {
        return Ok(TokenPool::read_from(&pool_path).map_err(WsError::from)?);
    }

    let members: Vec<Parameters<f32>> = teacher
        .member_keys
        .iter()
        .map(|k| ws.load_params(k))
        .collect::<Result<_, WsError>>()?;
    let k = members.len();
    let n_seqs = (n_tokens as usize).div_ceil(ctx);
    let start = ws.config.tokenizer.start_token();
    // generation batches bound memory and keep the projections row-batched;
    // per-sequence seeds make the grouping invisible in the output
    let gen_chunk = 64usize;
    let mut tokens = Vec::with_capacity(n_seqs * ctx);
    match mode {
        SamplingMode::IndividualMembers => {
            // member j serves sequences j, j+K, j+2K, ... ; emit in global order
            let mut per_member: Vec<Vec<Vec<u32>>> = vec![Vec::new(); k];
            for (j, params) in members.iter().enumerate() {
                let seq_ids: Vec<u64> =
                    (j..n_seqs).step_by(k).map(|i| i as u64).collect();
                for chunk in seq_ids.chunks(gen_chunk) {
                    let seeds: Vec<u64> = chunk.iter().map(|&i| derive_seed(seed, i)).collect();
                    let seqs = generate_sequences_seeded(
                        &[params],
                        &seeds,
                        ctx,
                        temperature,
                        start,
                    )
                    .map_err(WsError::from)?;
                    per_member[j].extend(seqs);
                }
            }
            let mut cursors = vec![0usize; k];
            for i in 0..n_seqs {
                let j = member_for_sequence(i, k);
                tokens.extend_from_slice(&per_member[j][cursors[j]]);
                cursors[j] += 1;
            }
        }
        SamplingMode::AveragedEnsemble => {
            let refs: Vec<&Parameters<f32>> = members.iter().collect();
            for chunk_start in (0..n_seqs).step_by(gen_chunk) {
                let chunk_end = (chunk_start + gen_chunk).min(n_seqs);
                let seeds: Vec<u64> =
                    (chunk_start..chunk_end).map(|i| derive_seed(seed, i as u64)).collect();
                let seqs =
                    generate_sequences_seeded(&refs, &seeds, ctx, temperature, start)
                        .map_err(WsError::from)?;
                for s in seqs {
                    tokens.extend(s);
                }
            }
        }
    }
    tokens.truncate(n_tokens as usize);
    let pool = TokenPool::from_tokens(tokens, teacher.member_config.vocab_size)
        .map_err(WsError::from)?;
    pool.write_to(&pool_path).map_err(WsError::from)?;
    let prov = SynthProvenance {
        teacher_key: teacher.ledger_key(),
        teacher_members: teacher.member_keys.clone(),
        n_tokens,
        temperature,
        seed,
        mode,
        pool_hash: pool.pool_hash.clone(),
    };
    std::fs::write(
        ws.synth_dir().join(format!("{synth_key}.json")),
        serde_json::to_vec_pretty(&prov).expect("provenance serializes"),
    )
    .map_err(WsError::from)?;
    Ok(pool)
}

/// One scheduled batch: real window indices, or a run of consecutive
/// (cyclically indexed) synthetic windows.
#[derive(Debug, Clone, PartialEq)]
pub enum MixedBatch {
    Real(Vec<u32>),
    Synth { start: u64 },
}

/// Deterministic interleave of `r` real batches then `s` synthetic batches,
/// repeating until the real side (which carries the epoch schedule) is
/// exhausted. The synthetic side is consumed sequentially with wraparound,
/// up to `synth_epoch_cap` passes.
pub fn build_mixed_schedule(
    real_batches: Vec<Vec<u32>>,
    n_synth_windows: u64,
    batch_size: u64,
    ratio: (u32, u32),
    synth_epoch_cap: u32,
) -> Result<Vec<MixedBatch>, DistillError> {
    let (r, s) = ratio;
    if r == 0 || s == 0 {
        return Err(DistillError::BadRatio(r, s));
    }
    let real_total = real_batches.len() as u64;
    let periods = real_total.div_ceil(r as u64);
    let synth_batches = periods * s as u64;
    let needed = synth_batches * batch_size;
    let allowed = synth_epoch_cap as u64 * n_synth_windows;
    if needed > allowed {
        return Err(DistillError::SynthExhausted {
            needed,
            available: n_synth_windows,
            cap: synth_epoch_cap,
            allowed,
        });
    }
    let mut out = Vec::with_capacity((real_total + synth_batches) as usize);
    let mut real_iter = real_batches.into_iter();
    let mut cursor = 0u64;
    'outer: loop {
        let mut emitted = 0;
        for _ in 0..r {
            match real_iter.next() {
                Some(b) => {
                    out.push(MixedBatch::Real(b));
                    emitted += 1;
                }
                None => break,
            }
        }
        if emitted == 0 {
            break 'outer;
        }
        for _ in 0..s {
            out.push(MixedBatch::Synth { start: cursor });
            cursor += batch_size;
        }
    }
    Ok(out)
}

/// Total trained tokens for `epochs` passes over `d` real tokens at an
/// `r:s` mixing ratio (synthetic gradient steps sized like real ones).
pub fn mixed_total_tokens(d: u64, epochs: u32, ratio: (u32, u32)) -> u128 {
    let (r, s) = ratio;
    d as u128 * epochs as u128 * (r as u128 + s as u128) / r as u128
}

/// Train a student from scratch on the real/synthetic mixture. The
/// synthetic pool is generated first (or loaded from cache); the run is
/// ledgered with full teacher provenance and cached by its spec digest.
pub fn distill_train(ws: &mut Workspace, spec: &DistillSpec) -> Result<RunRecord, DistillError> {
    let (r, s) = spec.mixing_ratio;
    if r == 0 || s == 0 {
        return Err(DistillError::BadRatio(r, s));
    }
    let key = spec.ledger_key();
    if let Some(rec) = ws.ledger.get_run(&key) {
        return Ok(rec.clone());
    }
    let synth = generate_synthetic(
        ws,
        &spec.teacher,
        spec.synth_tokens,
        spec.temperature,
        spec.sample_seed,
        spec.member_sampling_mode,
    )?;

    let real_pool = ws.pool(spec.d_tokens)?;
    let ctx = spec.student_config.context_len;
    let real_windows = make_windows(&real_pool, ctx);
    if real_windows.is_empty() {
        return Err(WsError::from(crate::corpus::CorpusError::EmptyPool).into());
    }
    let synth_windows = make_windows(&synth, ctx);
    if synth_windows.is_empty() {
        return Err(DistillError::SynthTooSmall);
    }
    let perm = Permutation::new(real_windows.len(), spec.data_seed);
    let real_stream = epoch_stream(
        real_windows.len(),
        &perm,
        spec.student_hyper.epochs as usize,
        spec.student_hyper.batch_size as usize,
    )
    .map_err(WsError::from)?;
    let real_batches: Vec<Vec<u32>> = real_stream.collect();
    let schedule = build_mixed_schedule(
        real_batches,
        synth_windows.len() as u64,
        spec.student_hyper.batch_size as u64,
        spec.mixing_ratio,
        spec.synth_epoch_cap,
    )?;
    let total_steps = schedule.len() as u64;

    let n_synth = synth_windows.len() as u64;
    let batch_size = spec.student_hyper.batch_size as u64;
    let batches = schedule.into_iter().map(|mb| match mb {
        MixedBatch::Real(idx) => TokenBatch::gather(&real_windows, &idx),
        MixedBatch::Synth { start } => {
            let idx: Vec<u32> =
                (0..batch_size).map(|i| ((start + i) % n_synth) as u32).collect();
            TokenBatch::gather(&synth_windows, &idx)
        }
    });

    let mut params =
        crate::model::init_params::<f32>(&spec.student_config, spec.init_seed);
    let stats = match train_on_stream(
        &mut params,
        batches,
        total_steps,
        &spec.student_hyper,
        &ws.config.knobs,
        ws.validation(),
    ) {
        Ok(stats) => stats,
        Err(TrainError::NonFinite { step }) => {
            let rec = distill_record(spec, &key, &synth, None, Some(step));
            ws.insert_run_record(rec.clone(), None)?;
            return Ok(rec);
        }
        Err(e) => return Err(WsError::from(e).into()),
    };
    let rec = distill_record(spec, &key, &synth, Some(&stats), None);
    ws.insert_run_record(rec.clone(), Some(&params))?;
    Ok(rec)
}

/// The no-mixing ablation arm: train a student on synthetic tokens only,
/// never repeating them, token-matched to a mixed run by taking exactly
/// `train_tokens` from the front of the generated pool. Recorded with
/// mixing ratio (0, 1) as provenance.
pub fn train_on_synthetic_only(
    ws: &mut Workspace,
    spec: &DistillSpec,
    train_tokens: u64,
) -> Result<RunRecord, DistillError> {
    if spec.synth_tokens < train_tokens {
        return Err(DistillError::SynthExhausted {
            needed: train_tokens,
            available: spec.synth_tokens,
            cap: 1,
            allowed: spec.synth_tokens,
        });
    }
    let mut no_mix = spec.clone();
    no_mix.mixing_ratio = (0, 1); // provenance marker; never a schedule input
    no_mix.student_hyper.epochs = 1; // fresh teacher data only
    let key = key_for("distill-nomix", &(&no_mix, train_tokens));
    if let Some(rec) = ws.ledger.get_run(&key) {
        return Ok(rec.clone());
    }
    let synth = generate_synthetic(
        ws,
        &spec.teacher,
        spec.synth_tokens,
        spec.temperature,
        spec.sample_seed,
        spec.member_sampling_mode,
    )?;
    let ctx = spec.student_config.context_len;
    let train_pool = synth.prefix(train_tokens as usize).map_err(WsError::from)?;
    let windows = make_windows(&train_pool, ctx);
    if windows.is_empty() {
        return Err(DistillError::SynthTooSmall);
    }
    let perm = Permutation::new(windows.len(), spec.data_seed);
    let hyper = no_mix.student_hyper.clone();
    let stream = epoch_stream(windows.len(), &perm, 1, hyper.batch_size as usize)
        .map_err(WsError::from)?;
    let total_steps = stream.total_batches() as u64;
    let batches = stream.map(|idx| TokenBatch::gather(&windows, &idx));
    let mut params = crate::model::init_params::<f32>(&spec.student_config, spec.init_seed);
    let stats = match train_on_stream(
        &mut params,
        batches,
        total_steps,
        &hyper,
        &ws.config.knobs,
        ws.validation(),
    ) {
        Ok(stats) => stats,
        Err(TrainError::NonFinite { step }) => {
            let rec = distill_record(&no_mix, &key, &synth, None, Some(step));
            ws.insert_run_record(rec.clone(), None)?;
            return Ok(rec);
        }
        Err(e) => return Err(WsError::from(e).into()),
    };
    let rec = distill_record(&no_mix, &key, &synth, Some(&stats), None);
    ws.insert_run_record(rec.clone(), Some(&params))?;
    Ok(rec)
}

fn distill_record(
    spec: &DistillSpec,
    key: &str,
    synth: &TokenPool,
    stats: Option<&crate::trainer::TrainStats>,
    failed_step: Option<u64>,
) -> RunRecord {
    let mode = match spec.member_sampling_mode {
        SamplingMode::IndividualMembers => "individual-members",
        SamplingMode::AveragedEnsemble => "averaged-ensemble",
    };
    RunRecord {
        ledger_key: key.to_string(),
        d: spec.d_tokens,
        n_params: spec.student_config.param_count() as u64,
        k: 1,
        lr: spec.student_hyper.peak_lr,
        epochs: spec.student_hyper.epochs,
        wd: spec.student_hyper.weight_decay,
        batch: spec.student_hyper.batch_size,
        init_seed: spec.init_seed,
        data_seed: spec.data_seed,
        status: if stats.is_some() { RunStatus::Ok } else { RunStatus::Failed },
        final_val_loss: stats.map(|s| s.final_val_loss),
        final_train_loss: stats.map(|s| s.final_train_loss),
        tokens_seen: stats.map(|s| s.tokens_seen).unwrap_or(0),
        recipe_tag: format!("distill:k{}:{}", spec.teacher.k(), mode),
        pool_hash: synth.pool_hash.clone(),
        config: spec.student_config.clone(),
        loss_curve: stats.map(|s| s.loss_curve.clone()).unwrap_or_default(),
        failed_step,
        provenance: Some(DistillProvenance {
            teacher_keys: spec.teacher.member_keys.clone(),
            synth_pool_hash: synth.pool_hash.clone(),
            temperature: spec.temperature,
            sample_seed: spec.sample_seed,
            member_sampling_mode: mode.to_string(),
            mixing_ratio: spec.mixing_ratio,
            synth_epoch_cap: spec.synth_epoch_cap,
        }),
    }
}
