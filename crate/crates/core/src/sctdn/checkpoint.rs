//! Checkpoint files: magic, header length, JSON header, raw `f64` payload.
//!
//! Layout: `SKTCKPT1`, header length as little-endian `u64`, the header JSON,
//! then every tensor of the manifest as little-endian `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::ModelParams;
use super::SctdnError;

const MAGIC: &[u8; 8] = b"SKTCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub manifest: Vec<ManifestEntry>,
    /// Free-form provenance (pipeline version, config digest, seed, epoch).
    pub meta: serde_json::Value,
}

pub fn write_checkpoint(params: &ModelParams, meta: serde_json::Value) -> Vec<u8> {
    let manifest = params.manifest();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        manifest: manifest
            .iter()
            .map(|t| ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let payload: usize = manifest.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &manifest {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointHeader), SctdnError> {
    let bad = |m: &str| SctdnError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| SctdnError::Checkpoint(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(SctdnError::Checkpoint(format!(
            "version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let mut params = ModelParams::zeros(&header.config);
    let expected: Vec<ManifestEntry> = params
        .manifest()
        .iter()
        .map(|t| ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    if expected != header.manifest {
        return Err(bad("manifest does not match the configuration"));
    }
    let mut payload = &bytes[16 + hlen..];
    for dst in params.slices_mut() {
        let need = dst.len() * 8;
        if payload.len() < need {
            return Err(bad("truncated payload"));
        }
        for (d, chunk) in dst.iter_mut().zip(payload[..need].chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        payload = &payload[need..];
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((params, header))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: serde_json::Value) -> Result<(), SctdnError> {
    std::fs::write(path, write_checkpoint(params, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader), SctdnError> {
    read_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let p = ModelParams::init(&ModelConfig::tiny(), 9);
        let bytes = write_checkpoint(&p, serde_json::json!({"seed": 9}));
        let (q, h) = read_checkpoint(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(h.meta["seed"], 9);
        assert_eq!(write_checkpoint(&q, h.meta.clone()), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = ModelParams::init(&ModelConfig::tiny(), 1);
        let bytes = write_checkpoint(&p, serde_json::Value::Null);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint(b"not a checkpoint").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
