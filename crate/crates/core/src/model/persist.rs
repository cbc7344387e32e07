//! Weight file: `b"ISD4L"`, a little-endian `u32` format version, a `u32`
//! byte length followed by a UTF-8 JSON descriptor, then every tensor as
//! little-endian `f32` in descriptor order. Nothing may follow the last
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, TensorSpec};
use super::{ModelError, ModelState, TrainingMetadata};

pub const MAGIC: &[u8; 5] = b"ISD4L";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    architecture: Architecture,
    tensors: Vec<TensorSpec>,
    metadata: TrainingMetadata,
}

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let descriptor = Descriptor {
        architecture: state.architecture.clone(),
        tensors: state.architecture.tensor_specs(),
        metadata: state.metadata.clone(),
    };
    let text = serde_json::to_string(&descriptor).expect("descriptor serializes");
    let floats: usize = state.weights.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + text.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for tensor in &state.weights {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::BadWeightFile(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], ModelError> {
    if bytes.len() < n {
        return Err(bad(format!(
            "truncated: needed {n} more bytes, found {}",
            bytes.len()
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(
        take(bytes, 4)?.try_into().expect("4 bytes"),
    ))
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<ModelState, ModelError> {
    let cursor = &mut bytes;
    if take(cursor, MAGIC.len())? != MAGIC {
        return Err(bad("missing ISD4L header"));
    }
    let version = read_u32(cursor)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = read_u32(cursor)? as usize;
    let text = std::str::from_utf8(take(cursor, len)?)
        .map_err(|e| bad(format!("descriptor is not UTF-8: {e}")))?;
    let descriptor: Descriptor =
        serde_json::from_str(text).map_err(|e| bad(format!("descriptor: {e}")))?;
    descriptor.architecture.validate().map_err(bad)?;
    if descriptor.tensors != descriptor.architecture.tensor_specs() {
        return Err(ModelError::ArchitectureMismatch(
            "tensor list does not match the architecture".into(),
        ));
    }
    let weights = descriptor
        .tensors
        .iter()
        .map(|spec| {
            let raw = take(cursor, 4 * spec.len())?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        })
        .collect::<Result<Vec<Vec<f32>>, ModelError>>()?;
    if !cursor.is_empty() {
        return Err(bad(format!("{} trailing bytes", cursor.len())));
    }
    Ok(ModelState {
        architecture: descriptor.architecture,
        weights,
        metadata: descriptor.metadata,
    })
}

pub fn save(state: &ModelState, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_bytes(state)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<ModelState, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
