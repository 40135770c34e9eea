//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "BLDMCKPT"
//! 8       4     format version (u32)
//! 12      4     header length H in bytes (u32)
//! 16      H     UTF-8 JSON header: {"config", "meta", "tensors": [{"name", "shape", "offset", "len"}]}
//! 16+H    ...   payload: f32 values, row-major, tensors at their element offsets
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::unet::{Unet, UnetConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BLDMCKPT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unknown tensor name {0:?}")]
    UnknownTensor(String),
    #[error("tensor {0:?} missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint was built for {found} product tanks, instance has {expected}")]
    HyperparameterMismatch { expected: usize, found: usize },
}

/// Training context stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub diffusion_steps: usize,
    pub schedule_offset: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: UnetConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &Unet<f32>, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for p in &model.store.params {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.shape.clone(), offset, len: p.value.len() });
        offset += p.value.len();
    }
    let header = serde_json::to_vec(&Header { config: model.config, meta, tensors })
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + header.len() + 4 * offset);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in &model.store.params {
        for v in &p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Unet<f32>, CheckpointMeta), CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            CheckpointError::BadMagic
        } else {
            CheckpointError::Truncated { needed: 16, available: bytes.len() }
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(CheckpointError::Truncated { needed: 16 + hlen, available: bytes.len() });
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..16 + hlen]).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let payload = &bytes[16 + hlen..];

    let mut model = Unet::<f32>::new(header.config, 0);
    let mut seen = vec![false; model.store.params.len()];
    for entry in &header.tensors {
        let idx = model
            .store
            .params
            .iter()
            .position(|p| p.name == entry.name)
            .ok_or_else(|| CheckpointError::UnknownTensor(entry.name.clone()))?;
        let param = &mut model.store.params[idx];
        if param.shape != entry.shape || entry.len != param.value.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                found: entry.shape.clone(),
                expected: param.shape.clone(),
            });
        }
        let end = 4 * (entry.offset + entry.len);
        if payload.len() < end {
            return Err(CheckpointError::Truncated { needed: 16 + hlen + end, available: bytes.len() });
        }
        for (k, v) in param.value.iter_mut().enumerate() {
            let at = 4 * (entry.offset + k);
            *v = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
        }
        seen[idx] = true;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::MissingTensor(model.store.params[k].name.clone()));
    }
    Ok((model, header.meta))
}

/// Loads a checkpoint and rejects it unless its image height matches `n_pt`.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    n_pt: usize,
) -> Result<(Unet<f32>, CheckpointMeta), CheckpointError> {
    let (model, meta) = load_checkpoint(path)?;
    if model.config.n_pt != n_pt {
        return Err(CheckpointError::HyperparameterMismatch { expected: n_pt, found: model.config.n_pt });
    }
    Ok((model, meta))
}
