//! Checkpoint layout: one JSON manifest line, then every block as
//! little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ClassifierConfig, TinyClassifier};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &str = "GKC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub magic: String,
    pub dtype: String,
    pub vocab_size: usize,
    pub config: ClassifierConfig,
    pub blocks: Vec<BlockEntry>,
}

pub fn manifest(model: &TinyClassifier) -> CheckpointManifest {
    CheckpointManifest {
        magic: CHECKPOINT_MAGIC.into(),
        dtype: "f64le".into(),
        vocab_size: model.vocab_size(),
        config: model.config().clone(),
        blocks: model
            .block_names()
            .iter()
            .zip(model.blocks())
            .map(|(name, m)| BlockEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    }
}

pub fn write_checkpoint(model: &TinyClassifier) -> Vec<u8> {
    let mut out = serde_json::to_vec(&manifest(model)).expect("manifest serializes");
    out.push(b'\n');
    for m in model.blocks() {
        out.extend(m.to_le_bytes());
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TinyClassifier> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Format {
        offset: 0,
        reason: "missing manifest line".into(),
    })?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("unreadable manifest: {e}"),
    })?;
    if manifest.magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {:?}, expected {CHECKPOINT_MAGIC:?}", manifest.magic),
        });
    }
    if manifest.dtype != "f64le" {
        return Err(Error::Format {
            offset: 0,
            reason: format!("unsupported dtype {:?}", manifest.dtype),
        });
    }
    let mut offset = nl + 1;
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for entry in &manifest.blocks {
        let n = entry.rows * entry.cols * 8;
        let chunk = bytes.get(offset..offset + n).ok_or(Error::Format {
            offset: bytes.len() as u64,
            reason: format!("payload truncated inside block {:?}", entry.name),
        })?;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        blocks.push(Matrix::from_vec(entry.rows, entry.cols, data)?);
        offset += n;
    }
    if offset != bytes.len() {
        return Err(Error::Format {
            offset: offset as u64,
            reason: format!("{} trailing bytes after payload", bytes.len() - offset),
        });
    }
    let model = TinyClassifier::from_parts(manifest.config, manifest.vocab_size, blocks).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("manifest does not describe a valid model: {e}"),
    })?;
    let names: Vec<&str> = manifest.blocks.iter().map(|b| b.name.as_str()).collect();
    if names != model.block_names().iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format {
            offset: 0,
            reason: "block names do not match the model layout".into(),
        });
    }
    Ok(model)
}

pub fn save_checkpoint(model: &TinyClassifier, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TinyClassifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TinyClassifier {
        let cfg = ClassifierConfig {
            dim: 4,
            ffn_mult: 2,
            n_classes: 3,
            max_len: 8,
            ..Default::default()
        };
        TinyClassifier::new(cfg, 10, None).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = write_checkpoint(&m);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = write_checkpoint(&model());
        let mut tampered = bytes.clone();
        let at = tampered.windows(4).position(|w| w == b"GKC1").unwrap();
        tampered[at + 3] = b'X';
        assert!(matches!(read_checkpoint(&tampered), Err(Error::Format { offset: 0, .. })));

        let short = &bytes[..bytes.len() - 3];
        match read_checkpoint(short) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, short.len() as u64),
            other => panic!("{other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_checkpoint(&long), Err(Error::Format { .. })));
        assert!(matches!(read_checkpoint(b"no newline"), Err(Error::Format { offset: 0, .. })));
    }
}
