//! Versioned binary checkpoints: JSON header + raw little-endian f32 tensors
//! in declaration order.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::{DecoderParams, ModelConfig};

const MAGIC: &[u8; 8] = b"NDCHKPT\x01";

/// Header metadata stored alongside the raw tensors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub subject_ids: Vec<String>,
    pub seed: u64,
    pub vocab_hash: String,
    pub params: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &DecoderParams,
    seed: u64,
    vocab_hash: &str,
) -> Result<()> {
    let meta = CheckpointMeta {
        version: 1,
        config: cfg.clone(),
        subject_ids: params.subject_ids.clone(),
        seed,
        vocab_hash: vocab_hash.to_string(),
        params: params
            .order
            .iter()
            .map(|n| (n.clone(), params.tensors[n].shape().to_vec()))
            .collect(),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(&header)?;
    for name in &params.order {
        for &v in params.tensors[name].data() {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, DecoderParams)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Model(format!(
            "not a checkpoint file: {}",
            path.display()
        )));
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)?;
    if meta.version != 1 {
        return Err(Error::Model(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    let mut tensors = crate::diffcore::TensorMap::new();
    let mut order = Vec::with_capacity(meta.params.len());
    for (name, shape) in &meta.params {
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        f.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        order.push(name.clone());
        tensors.insert(name.clone(), Tensor::new(shape.clone(), data)?);
    }
    let params = DecoderParams {
        tensors,
        order,
        subject_ids: meta.subject_ids.clone(),
    };
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = ModelConfig::desk_default(4, 8);
        let params =
            DecoderParams::init(&cfg, vec!["s0".into(), "s1".into()], 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params, 42, "abc123").unwrap();
        let (meta, back) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.config, cfg);
        assert_eq!(meta.vocab_hash, "abc123");
        assert_eq!(back.order, params.order);
        for name in &params.order {
            let a = params.tensors[name].data();
            let b = back.tensors[name].data();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn garbage_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
