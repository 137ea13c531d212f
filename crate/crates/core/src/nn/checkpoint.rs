use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::model::{SrcnnModel, TrainMeta};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SRC1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    seed: u64,
    train_meta: TrainMeta,
    param_bytes: usize,
}

/// Magic, u32 LE header length, JSON header, then every parameter as a
/// little-endian f32 in layer order (weights, then bias).
pub fn checkpoint_bytes<T: Scalar>(model: &SrcnnModel<T>) -> Result<Vec<u8>> {
    let params = model.flat_params();
    let header = Header {
        arch: model.arch.clone(),
        seed: model.meta.seed,
        train_meta: model.meta.clone(),
        param_bytes: params.len() * 4,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + params.len() * 4);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<SrcnnModel<T>> {
    if bytes.len() < 8 {
        return Err(Error::Format { offset: bytes.len() as u64, msg: "truncated checkpoint preamble".into() });
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad checkpoint magic".into() });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(Error::Format {
            offset: 8,
            msg: format!("header length {hlen} exceeds remaining {} bytes", body.len()),
        });
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Format { offset: 8, msg: format!("checkpoint header: {e}") })?;
    header.arch.validate()?;
    let payload = &body[hlen..];
    let expected = header.arch.param_count() * 4;
    if header.param_bytes != expected {
        return Err(Error::Corruption(format!(
            "header declares {} parameter bytes, architecture needs {expected}",
            header.param_bytes
        )));
    }
    if payload.len() != expected {
        return Err(Error::Corruption(format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let flat: Vec<T> =
        payload.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    let mut model = SrcnnModel::build(header.arch, 0)?;
    model.set_flat_params(&flat)?;
    model.meta = header.train_meta;
    model.meta.seed = header.seed;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &SrcnnModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<SrcnnModel<T>> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
