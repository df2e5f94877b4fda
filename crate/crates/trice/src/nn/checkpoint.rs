//! Checkpoint file format: a fixed header, parameter arrays as little-endian
//! 32-bit floats in declaration order, and a trailing 64-bit content
//! checksum over everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::model::{ModelConfig, ParameterSet};
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 4] = b"TTLM";
const FORMAT_VERSION: u32 = 1;

/// Everything the header records about a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub cfg: ModelConfig,
    pub stage_tag: String,
    pub seed: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet<f32>,
    stage_tag: &str,
    seed: u64,
) -> Result<(), NnError> {
    let cfg = params.cfg;
    let mut buf: Vec<u8> = Vec::with_capacity(64 + params.n_scalars() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [cfg.vocab, cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.ctx_len] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&seed.to_le_bytes());
    let tag = stage_tag.as_bytes();
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag);
    for t in params.tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet<f32>, CheckpointHeader), NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 + 20 + 8 + 4 + 8 {
        return Err(NnError::CorruptCheckpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(NnError::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut cur = 0usize;
    let take = |cur: &mut usize, n: usize| -> Result<&[u8], NnError> {
        if *cur + n > body.len() {
            return Err(NnError::CorruptCheckpoint("truncated header".into()));
        }
        let s = &body[*cur..*cur + n];
        *cur += n;
        Ok(s)
    };
    if take(&mut cur, 4)? != MAGIC {
        return Err(NnError::CorruptCheckpoint("bad magic".into()));
    }
    let read_u32 = |cur: &mut usize| -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
    };
    let version = read_u32(&mut cur)?;
    if version != FORMAT_VERSION {
        return Err(NnError::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let vocab = read_u32(&mut cur)? as usize;
    let d_model = read_u32(&mut cur)? as usize;
    let n_layers = read_u32(&mut cur)? as usize;
    let n_heads = read_u32(&mut cur)? as usize;
    let ctx_len = read_u32(&mut cur)? as usize;
    let seed = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap());
    let tag_len = read_u32(&mut cur)? as usize;
    let stage_tag = String::from_utf8(take(&mut cur, tag_len)?.to_vec())
        .map_err(|_| NnError::CorruptCheckpoint("stage tag not utf-8".into()))?;

    let cfg = ModelConfig { vocab, d_model, n_layers, n_heads, ctx_len };
    cfg.validate()?;
    let mut params = ParameterSet::<f32>::zeros(cfg);
    for t in params.tensors_mut() {
        let n = t.len();
        let raw = take(&mut cur, n * 4)?;
        let mut data = Vec::with_capacity(n);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        *t = Tensor::new(data, t.shape().to_vec());
    }
    if cur != body.len() {
        return Err(NnError::CorruptCheckpoint(format!(
            "{} trailing bytes after parameters",
            body.len() - cur
        )));
    }
    Ok((params, CheckpointHeader { version, cfg, stage_tag, seed }))
}

/// Short stable identifier for a parameter set (hex of the content
/// checksum over the serialized form). Used in provenance records.
pub fn checkpoint_content_id(params: &ParameterSet<f32>) -> String {
    let mut buf = Vec::with_capacity(params.n_scalars() * 4);
    for t in params.tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    format!("{:016x}", fnv1a64(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn roundtrip_preserves_everything() {
        let cfg = ModelConfig { vocab: 7, d_model: 8, n_layers: 1, n_heads: 2, ctx_len: 16 };
        let mut rng = stream_rng(41, "ckpt");
        let params = ParameterSet::<f32>::init_random(cfg, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, "stage-1", 42).unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.stage_tag, "stage-1");
        assert_eq!(header.seed, 42);
        assert_eq!(header.cfg, cfg);
        for (a, b) in params.tensors().iter().zip(loaded.tensors().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = ModelConfig { vocab: 7, d_model: 8, n_layers: 1, n_heads: 2, ctx_len: 16 };
        let mut rng = stream_rng(42, "ckpt");
        let params = ParameterSet::<f32>::init_random(cfg, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, "stage-1", 1).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NnError::CorruptCheckpoint(_))));
    }

    #[test]
    fn content_id_tracks_weights() {
        let cfg = ModelConfig { vocab: 7, d_model: 8, n_layers: 1, n_heads: 2, ctx_len: 16 };
        let mut rng = stream_rng(43, "ckpt");
        let a = ParameterSet::<f32>::init_random(cfg, &mut rng);
        let mut b = a.clone();
        assert_eq!(checkpoint_content_id(&a), checkpoint_content_id(&b));
        b.tensors_mut()[0].data_mut()[0] += 1.0;
        assert_ne!(checkpoint_content_id(&a), checkpoint_content_id(&b));
    }
}
