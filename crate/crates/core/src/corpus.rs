//! Fixed token budgets: byte-level tokenization, nested train pools, a
//! frozen validation set, window slicing, and per-epoch batch order.
//!
//! A pool built for budget `d1` is exactly the first `d1` tokens of the
//! pool built for any `d2 > d1` from the same source, so loss curves at
//! different budgets are comparable by construction.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub type TokenId = u32;

const POOL_MAGIC: &[u8; 8] = b"DLABPOOL";
const POOL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("source yields {available} tokens, need {needed}")]
    InsufficientSource { needed: usize, available: usize },
    #[error("no windows to stream (empty pool or context longer than pool)")]
    EmptyPool,
    #[error("token id {id} out of range for vocab {vocab}")]
    BadToken { id: TokenId, vocab: u32 },
    #[error("permutation does not match window count ({got} vs {expected})")]
    BadPermutation { got: usize, expected: usize },
    #[error("not a pool file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Byte-level tokenizer: every byte is its own id, plus an optional BOS id
/// used as the start token for unconditional sampling. BOS never appears in
/// encoded text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub vocab_size: u32,
    pub bos_id: Option<TokenId>,
}

impl TokenizerSpec {
    /// Bytes 0..=255 plus a BOS token at id 256.
    pub fn byte_level_with_bos() -> Self {
        TokenizerSpec { vocab_size: 257, bos_id: Some(256) }
    }

    /// Plain byte vocabulary, no BOS.
    pub fn byte_level() -> Self {
        TokenizerSpec { vocab_size: 256, bos_id: None }
    }

    pub fn encode(&self, source: &[u8]) -> Vec<TokenId> {
        source.iter().map(|&b| b as TokenId).collect()
    }

    /// Start token for unconditional generation: BOS when configured, id 0 otherwise.
    pub fn start_token(&self) -> TokenId {
        self.bos_id.unwrap_or(0)
    }
}

/// A fixed, ordered token budget. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPool {
    pub tokens: Vec<TokenId>,
    pub vocab_size: u32,
    /// Hex sha-256 over the little-endian token bytes; ledger key material.
    pub pool_hash: String,
}

impl TokenPool {
    pub fn from_tokens(tokens: Vec<TokenId>, vocab_size: u32) -> Result<Self, CorpusError> {
        if let Some(&id) = tokens.iter().find(|&&id| id >= vocab_size) {
            return Err(CorpusError::BadToken { id, vocab: vocab_size });
        }
        let pool_hash = hash_tokens(&tokens);
        Ok(TokenPool { tokens, vocab_size, pool_hash })
    }

    pub fn size_d(&self) -> usize {
        self.tokens.len()
    }

    /// First `d` tokens as a new pool; the nesting guarantee lives here.
    pub fn prefix(&self, d: usize) -> Result<TokenPool, CorpusError> {
        if d > self.tokens.len() {
            return Err(CorpusError::InsufficientSource { needed: d, available: self.tokens.len() });
        }
        TokenPool::from_tokens(self.tokens[..d].to_vec(), self.vocab_size)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(POOL_MAGIC)?;
        f.write_all(&POOL_VERSION.to_le_bytes())?;
        f.write_all(&self.vocab_size.to_le_bytes())?;
        f.write_all(&(self.tokens.len() as u64).to_le_bytes())?;
        let digest = hex::decode(&self.pool_hash).expect("pool_hash is hex");
        f.write_all(&digest)?;
        for t in &self.tokens {
            f.write_all(&t.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, CorpusError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != POOL_MAGIC {
            return Err(CorpusError::Format(format!("bad magic in {}", path.display())));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != POOL_VERSION {
            return Err(CorpusError::Format("unsupported pool version".into()));
        }
        f.read_exact(&mut u32buf)?;
        let vocab_size = u32::from_le_bytes(u32buf);
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let size_d = u64::from_le_bytes(u64buf) as usize;
        let mut digest = [0u8; 32];
        f.read_exact(&mut digest)?;
        let mut tokens = Vec::with_capacity(size_d);
        for _ in 0..size_d {
            f.read_exact(&mut u32buf)?;
            tokens.push(u32::from_le_bytes(u32buf));
        }
        let pool = TokenPool::from_tokens(tokens, vocab_size)?;
        if hex::decode(&pool.pool_hash).expect("hex") != digest {
            return Err(CorpusError::Format(format!("hash mismatch in {}", path.display())));
        }
        Ok(pool)
    }
}

fn hash_tokens(tokens: &[TokenId]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Tokenize `source` and keep the first `d` tokens.
pub fn build_pool(source: &[u8], d: usize, vocab: &TokenizerSpec) -> Result<TokenPool, CorpusError> {
    let tokens = vocab.encode(source);
    if tokens.len() < d {
        return Err(CorpusError::InsufficientSource { needed: d, available: tokens.len() });
    }
    TokenPool::from_tokens(tokens[..d].to_vec(), vocab.vocab_size)
}

/// Non-overlapping consecutive windows over a pool; the trailing remainder
/// that does not fill a window is dropped.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    tokens: &'a [TokenId],
    pub context_len: usize,
    n: usize,
}

pub fn make_windows(pool: &TokenPool, context_len: usize) -> Windows<'_> {
    assert!(context_len >= 2, "context_len must be at least 2");
    let n = pool.tokens.len() / context_len;
    Windows { tokens: &pool.tokens, context_len, n }
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn window(&self, i: usize) -> &'a [TokenId] {
        &self.tokens[i * self.context_len..(i + 1) * self.context_len]
    }
}

/// Frozen held-out windows, identical across all experiments in a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub windows: Vec<Vec<TokenId>>,
    pub window_len: usize,
}

impl ValidationSet {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// True if no validation window appears verbatim in `pool`'s window set.
    pub fn disjoint_from(&self, pool: &TokenPool) -> bool {
        let ws = make_windows(pool, self.window_len);
        let train: std::collections::HashSet<&[TokenId]> =
            (0..ws.len()).map(|i| ws.window(i)).collect();
        self.windows.iter().all(|w| !train.contains(w.as_slice()))
    }
}

/// A fixed shuffle of window indices, reproducible from its seed and reused
/// across every epoch of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub order: Vec<u32>,
    pub data_seed: u64,
}

impl Permutation {
    pub fn new(n_windows: usize, data_seed: u64) -> Self {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<u32> = (0..n_windows as u32).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(data_seed);
        order.shuffle(&mut rng);
        Permutation { order, data_seed }
    }

    pub fn identity(n_windows: usize) -> Self {
        Permutation { order: (0..n_windows as u32).collect(), data_seed: 0 }
    }

    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        for &i in &self.order {
            match seen.get_mut(i as usize) {
                Some(s) if !*s => *s = true,
                _ => return false,
            }
        }
        true
    }
}

/// Ordered stream of batches of window indices: each epoch walks the same
/// permutation, batches are consecutive slices of it (last batch of an
/// epoch may be short).
#[derive(Debug, Clone)]
pub struct EpochStream {
    order: Vec<u32>,
    epochs: usize,
    batch_size: usize,
    epoch: usize,
    cursor: usize,
}

pub fn epoch_stream(
    n_windows: usize,
    permutation: &Permutation,
    epochs: usize,
    batch_size: usize,
) -> Result<EpochStream, CorpusError> {
    if n_windows == 0 {
        return Err(CorpusError::EmptyPool);
    }
    if permutation.order.len() != n_windows {
        return Err(CorpusError::BadPermutation { got: permutation.order.len(), expected: n_windows });
    }
    assert!(epochs >= 1 && batch_size >= 1);
    Ok(EpochStream { order: permutation.order.clone(), epochs, batch_size, epoch: 0, cursor: 0 })
}

impl EpochStream {
    pub fn total_batches(&self) -> usize {
        self.epochs * self.order.len().div_ceil(self.batch_size)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for EpochStream {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.epoch == self.epochs {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        if self.cursor == self.order.len() {
            self.cursor = 0;
            self.epoch += 1;
        }
        Some(batch)
    }
}

/// Deterministic English-like filler text for demos and desk corpora.
///
/// Sentences mix a small closed vocabulary (learnable structure) with
/// high-entropy slot fills: six-digit ids and nonce names drawn from a few
/// thousand combinations. The scaffolding is predictable; the slot fills
/// are irreducible noise a small model can only lower by memorizing the
/// specific training sample, which is what makes fixed desk corpora overfit
/// under heavy epoching the way web corpora do at full scale.
pub fn sample_text(seed: u64, min_bytes: usize) -> String {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    const SUBJECTS: &[&str] = &[
        "the clerk", "a courier", "the warden", "our pilot", "the tenant", "a surveyor",
        "the broker", "the smith", "a herald", "the keeper",
    ];
    const VERBS: &[&str] = &[
        "sends", "weighs", "records", "returns", "inspects", "repairs", "collects", "signs",
        "stores", "delivers",
    ];
    const OBJECTS: &[&str] = &[
        "the ledger", "a parcel", "the lantern", "the charter", "a bundle", "the engine",
        "the archive", "a sample", "the beacon", "the cargo",
    ];
    const ONSETS: &[&str] = &["br", "kel", "dor", "mar", "vos", "tin", "gral", "sen", "pol", "zar",
        "fen", "lur", "mab", "rik", "sol", "tav", "ulm", "ver", "wex", "yor"];
    const MIDS: &[&str] = &["a", "e", "i", "o", "u", "ad", "el", "im", "ol", "ur", "ash", "end",
        "ig", "oc", "ut", "yr"];
    const CODAS: &[&str] = &["an", "eth", "ia", "on", "une", "ar", "is", "oth", "um", "ae",
        "ek", "il", "or", "us", "ya", "en"];

    let mut out = String::with_capacity(min_bytes + 128);
    while out.len() < min_bytes {
        let name = |rng: &mut rand_chacha::ChaCha8Rng| {
            let o = ONSETS[rng.gen_range(0..ONSETS.len())];
            let m = MIDS[rng.gen_range(0..MIDS.len())];
            let c = CODAS[rng.gen_range(0..CODAS.len())];
            format!("{o}{m}{c}")
        };
        let id = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(0..1_000_000u32);
        let sentence = match rng.gen_range(0..5u32) {
            0 => format!(
                "{} {} lot {:06} to {}. ",
                SUBJECTS[rng.gen_range(0..SUBJECTS.len())],
                VERBS[rng.gen_range(0..VERBS.len())],
                id(&mut rng),
                name(&mut rng),
            ),
            1 => format!(
                "{} of {} {} case {:06}. ",
                OBJECTS[rng.gen_range(0..OBJECTS.len())],
                name(&mut rng),
                VERBS[rng.gen_range(0..VERBS.len())],
                id(&mut rng),
            ),
            2 => format!(
                "{} says lot {:06} goes to {}. ",
                name(&mut rng),
                id(&mut rng),
                name(&mut rng),
            ),
            3 => format!(
                "manifest {:06} lists {} and {}. ",
                id(&mut rng),
                name(&mut rng),
                name(&mut rng),
            ),
            _ => format!(
                "{} {} {} for {} at bay {:06}. ",
                SUBJECTS[rng.gen_range(0..SUBJECTS.len())],
                VERBS[rng.gen_range(0..VERBS.len())],
                OBJECTS[rng.gen_range(0..OBJECTS.len())],
                name(&mut rng),
                id(&mut rng),
            ),
        };
        out.push_str(&sentence);
    }
    out
}
