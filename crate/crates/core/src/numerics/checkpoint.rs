//! `EDSC` checkpoint files and their JSON sidecars.
//!
//! Layout: magic `EDSC`, version u16, tensor count u16, then per tensor
//! (name length u8, name, rank u8, dims u32 each, values f32), then the
//! step u64 and learning rate f32. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Parameters;
use super::tensor::Tensor;
use super::train::ModelCheckpoint;
use crate::codec::{narrow, Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EDSC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub seed: u64,
    pub config_hash: String,
}

pub fn encode_checkpoint(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut w = Writer::with_capacity(16 + ckpt.params.count() * 4);
    w.raw(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u16(narrow(ckpt.params.entries.len(), "layer count")?);
    for (name, t) in &ckpt.params.entries {
        w.u8(narrow(name.len(), "name length")?);
        w.raw(name.as_bytes());
        w.u8(narrow(t.rank(), "rank")?);
        for &d in t.shape() {
            w.u32(narrow(d, "dimension")?);
        }
        for &v in t.data() {
            w.f32(v as f32);
        }
    }
    w.u64(ckpt.step);
    w.f32(ckpt.learning_rate as f32);
    Ok(w.bytes)
}

/// Decodes a checkpoint; `seed` comes from the sidecar.
pub fn decode_checkpoint(bytes: &[u8], seed: u64) -> Result<ModelCheckpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return r.fail(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u16()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u8()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).or_else(|_| r.fail("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()? as f64);
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    let step = r.u64()?;
    let learning_rate = r.f32()? as f64;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Ok(ModelCheckpoint { params: Parameters { entries }, step, learning_rate, seed })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint, config_hash: &str) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?)?;
    let side = CheckpointSidecar { seed: ckpt.seed, config_hash: config_hash.to_string() };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelCheckpoint, CheckpointSidecar)> {
    let side: CheckpointSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let bytes = std::fs::read(path)?;
    let ckpt = decode_checkpoint(&bytes, side.seed).map_err(|e| match e {
        Error::Format { offset, detail } => Error::Format { offset, detail: format!("{}: {detail}", path.display()) },
        other => other,
    })?;
    Ok((ckpt, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::model::{Geometry, ModelSpec};

    fn sample() -> ModelCheckpoint {
        let spec = ModelSpec::default_classifier(Geometry::new(16, 16, 1), 2);
        let mut params = spec.init(11).unwrap();
        params.round_to_f32();
        ModelCheckpoint { params, step: 42, learning_rate: 0.01f32 as f64, seed: 11 }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let c = sample();
        let bytes = encode_checkpoint(&c).unwrap();
        assert_eq!(&bytes[..4], b"EDSC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(decode_checkpoint(&bytes, 11).unwrap(), c);
    }

    #[test]
    fn layout_length_matches_hand_count() {
        let c = sample();
        let mut expected = 4 + 2 + 2 + 8 + 4;
        for (name, t) in &c.params.entries {
            expected += 1 + name.len() + 1 + 4 * t.rank() + 4 * t.len();
        }
        assert_eq!(encode_checkpoint(&c).unwrap().len(), expected);
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [0, 3, 7, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut], 0), Err(Error::Format { .. })));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, 0), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.edsc");
        let c = sample();
        save_checkpoint(&path, &c, "abc").unwrap();
        let (back, side) = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(side, CheckpointSidecar { seed: 11, config_hash: "abc".into() });
    }
}
