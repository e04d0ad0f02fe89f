//! The `FGE1` embedding file: a one-line JSON header followed by the raw
//! row-major little-endian `f64` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::GroundedEmbedding;
use crate::numerics::Matrix;

const MAGIC: &str = "FGE1";
const DTYPE: &str = "f64le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    vocab_size: usize,
    dim: usize,
    feature_dim: usize,
    schema_sha256: String,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FingerprintCheck {
    Match,
    Mismatch { expected: String, actual: String },
}

pub fn write_embedding(ge: &GroundedEmbedding) -> Vec<u8> {
    let header = Header {
        magic: MAGIC.into(),
        vocab_size: ge.vocab_size(),
        dim: ge.dim(),
        feature_dim: ge.feature_dim,
        schema_sha256: ge.schema_sha256.clone(),
        dtype: DTYPE.into(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(ge.embedding.to_le_bytes());
    out
}

pub fn read_embedding(bytes: &[u8]) -> Result<GroundedEmbedding> {
    if !bytes.starts_with(b"{") {
        return Err(Error::Format {
            offset: 0,
            reason: "missing FGE1 header".into(),
        });
    }
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Format {
        offset: bytes.len() as u64,
        reason: "header is not newline-terminated".into(),
    })?;
    let header: Header = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format {
        offset: e.column().saturating_sub(1) as u64,
        reason: format!("bad header: {e}"),
    })?;
    if header.magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {:?}, expected {MAGIC:?}", header.magic),
        });
    }
    if header.dtype != DTYPE {
        return Err(Error::Format {
            offset: 0,
            reason: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let start = newline + 1;
    let payload = &bytes[start..];
    let want = header
        .vocab_size
        .checked_mul(header.dim)
        .and_then(|n| n.checked_mul(8))
        .ok_or(Error::Format {
            offset: 0,
            reason: "header dimensions overflow".into(),
        })?;
    if payload.len() < want {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            reason: format!("truncated payload: {} of {want} bytes", payload.len()),
        });
    }
    if payload.len() > want {
        return Err(Error::Format {
            offset: (start + want) as u64,
            reason: format!("{} trailing bytes after payload", payload.len() - want),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(GroundedEmbedding {
        embedding: Matrix::from_vec(header.vocab_size, header.dim, data)?,
        feature_dim: header.feature_dim,
        schema_sha256: header.schema_sha256,
        config: None,
    })
}

pub fn export_embedding(ge: &GroundedEmbedding, path: &Path) -> Result<()> {
    fs::write(path, write_embedding(ge)).map_err(|e| Error::io(path, e))
}

/// Reads an embedding file. When `expected_dim` is given, a different
/// embedding dimension is reported as a format error.
pub fn import_embedding(path: &Path, expected_dim: Option<usize>) -> Result<GroundedEmbedding> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ge = read_embedding(&bytes)?;
    if let Some(d) = expected_dim {
        if ge.dim() != d {
            return Err(Error::Format {
                offset: 0,
                reason: format!("embedding dim {} does not match expected {d}", ge.dim()),
            });
        }
    }
    Ok(ge)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GroundedEmbedding {
        GroundedEmbedding {
            embedding: Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) * (j as f64 - 0.7)),
            feature_dim: 39,
            schema_sha256: "ab".repeat(32),
            config: None,
        }
    }

    #[test]
    fn header_layout() {
        let bytes = write_embedding(&sample());
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            format!(
                "{{\"magic\":\"FGE1\",\"vocab_size\":3,\"dim\":2,\"feature_dim\":39,\"schema_sha256\":\"{}\",\"dtype\":\"f64le\"}}",
                "ab".repeat(32)
            )
        );
        assert_eq!(bytes.len() - nl - 1, 3 * 2 * 8);
    }

    #[test]
    fn round_trip_and_errors() {
        let ge = sample();
        let bytes = write_embedding(&ge);
        assert_eq!(read_embedding(&bytes).unwrap(), ge);

        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_embedding(cut), Err(Error::Format { reason, .. }) if reason.contains("truncated")));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(read_embedding(&extra), Err(Error::Format { .. })));

        let bad = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()])
            .replace("FGE1", "FGE2");
        let mut bad = bad.into_bytes();
        bad.push(b'\n');
        bad.extend(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..]);
        assert!(matches!(read_embedding(&bad), Err(Error::Format { offset: 0, reason }) if reason.contains("magic")));

        assert!(matches!(read_embedding(b"GARBAGE"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn fingerprint_mismatch_is_reported() {
        let mut ge = sample();
        ge.schema_sha256 = crate::features::fingerprint(b"features v1");
        assert_eq!(ge.check_fingerprint(b"features v1"), FingerprintCheck::Match);
        assert!(matches!(
            ge.check_fingerprint(b"features v2"),
            FingerprintCheck::Mismatch { .. }
        ));
    }
}
