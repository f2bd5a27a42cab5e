//! Checkpoint directories: `manifest.json` plus a raw f32 parameter payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{atomic_write, decode_f32, encode_f32, read_bytes, read_json, sha256_hex, write_json};

use super::{Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const PAYLOAD: &str = "params.bin";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    grid: Grid,
    params: Vec<Entry>,
    payload: String,
    sha256: String,
}

/// Write `model` into directory `dir`, creating it if needed.
pub fn save(model: &Model, dir: &Path) -> Result<()> {
    let mut values = Vec::with_capacity(model.parameter_count());
    let mut params = Vec::new();
    for (name, t) in model.params.iter() {
        values.extend_from_slice(t.data());
        params.push(Entry { name: name.to_string(), shape: t.shape().to_vec() });
    }
    let bytes = encode_f32(&values);
    atomic_write(&dir.join(PAYLOAD), &bytes)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        grid: model.grid.clone(),
        params,
        payload: PAYLOAD.into(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Rebuild the model recorded in `dir` and load its parameters.
pub fn load(dir: &Path) -> Result<Model> {
    let value: serde_json::Value = read_json(&dir.join("manifest.json"))?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::Schema { found, expected: CHECKPOINT_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::Json { path: dir.join("manifest.json"), source: e })?;
    let bytes = read_bytes(&dir.join(&manifest.payload))?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(Error::Corrupt(format!("checksum mismatch in {}", dir.join(&manifest.payload).display())));
    }
    let values = decode_f32(&bytes)?;
    let mut model = Model::with_grid(manifest.config, &manifest.grid)?;
    if manifest.params.len() != model.params.len() {
        return Err(Error::Corrupt(format!(
            "manifest lists {} tensors, config builds {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    let mut offset = 0;
    for entry in &manifest.params {
        let id = model.params.id(&entry.name).ok_or_else(|| Error::Corrupt(format!("unknown parameter {}", entry.name)))?;
        let t = model.params.get_mut(id);
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Corrupt(format!("parameter {} has shape {:?}, config expects {:?}", entry.name, entry.shape, t.shape())));
        }
        let n = t.len();
        let chunk = values.get(offset..offset + n).ok_or_else(|| Error::Corrupt("payload shorter than manifest".into()))?;
        t.data_mut().copy_from_slice(chunk);
        offset += n;
    }
    if offset != values.len() {
        return Err(Error::Corrupt("payload longer than manifest".into()));
    }
    Ok(model)
}
