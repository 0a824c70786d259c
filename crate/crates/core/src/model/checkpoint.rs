//! Checkpoint files: a JSON header (config, init seed, step) followed by the
//! raw little-endian f32 parameter buffer in layout order. Round trips are
//! bit-exact.

use super::{ModelConfig, ModelError, Parameters};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 8] = b"DLABCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub step: u64,
}

pub fn save_checkpoint(
    params: &Parameters<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), ModelError> {
    if meta.config != params.config {
        return Err(ModelError::ShapeMismatch("checkpoint meta config differs".into()));
    }
    let header = serde_json::to_vec(meta).expect("meta serializes");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&CKPT_VERSION.to_le_bytes())?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(&header)?;
    for x in &params.data {
        f.write_all(&x.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters<f32>, CheckpointMeta), ModelError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != CKPT_VERSION {
        return Err(ModelError::Checkpoint("unsupported version".into()));
    }
    f.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)
        .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    meta.config.validate()?;
    let total = meta.config.layout().total;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        f.read_exact(&mut u32buf)?;
        data.push(f32::from_le_bytes(u32buf));
    }
    Ok((Parameters { config: meta.config.clone(), data }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::desk();
        let mut p = init_params::<f32>(&cfg, 99);
        p.data[17] = f32::MIN_POSITIVE; // subnormal boundary survives
        let meta = CheckpointMeta { config: cfg, init_seed: 99, step: 1234 };
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(p.data.len(), q.data.len());
        for (a, b) in p.data.iter().zip(&q.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
