//! Dataset directory: `manifest.json` plus one little-endian f32 file per
//! trajectory, row-major `(T + 1, spatial...)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetBundle, PdeConfig, Split, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{atomic_write, decode_f32, encode_f32, read_bytes, read_json, write_json};
use crate::nn::Tensor;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: PdeConfig,
    grid: Grid,
    /// Time axis of the longest trajectory; shorter ones use a prefix.
    times: Vec<f64>,
    /// Stored steps per trajectory.
    steps: Vec<usize>,
    grid_shape: Vec<usize>,
    splits: Vec<Split>,
    seeds: Vec<u64>,
    files: Vec<String>,
}

pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let mut files = Vec::with_capacity(bundle.len());
    for (m, t) in bundle.trajectories.iter().enumerate() {
        let name = format!("traj_{m:05}.bin");
        atomic_write(&dir.join(&name), &encode_f32(t.fields.data()))?;
        files.push(name);
    }
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        config: bundle.config.clone(),
        grid: bundle.grid().clone(),
        times: bundle.trajectories.iter().max_by_key(|t| t.n_steps()).expect("nonempty").times.clone(),
        steps: bundle.trajectories.iter().map(Trajectory::n_steps).collect(),
        grid_shape: bundle.grid().shape(),
        splits: bundle.splits.clone(),
        seeds: bundle.seeds.clone(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let path = dir.join("manifest.json");
    let value: serde_json::Value = read_json(&path)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema { found, expected: DATASET_SCHEMA_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| Error::Json { path: path.clone(), source: e })?;
    if manifest.steps.len() != manifest.files.len() || manifest.grid.shape() != manifest.grid_shape {
        return Err(Error::Corrupt("manifest step counts or grid shape are inconsistent".into()));
    }
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for (name, &steps) in manifest.files.iter().zip(&manifest.steps) {
        if steps + 1 > manifest.times.len() {
            return Err(Error::Corrupt(format!("{name} claims {steps} steps, time axis has {}", manifest.times.len() - 1)));
        }
        let mut shape = vec![steps + 1];
        shape.extend(&manifest.grid_shape);
        let values = decode_f32(&read_bytes(&dir.join(name))?)?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Corrupt(format!("{name} holds {} values, manifest shape {shape:?}", values.len())));
        }
        trajectories.push(Trajectory {
            grid: manifest.grid.clone(),
            times: manifest.times[..=steps].to_vec(),
            fields: Tensor::from_vec(&shape, values),
        });
    }
    let bundle = DatasetBundle { config: manifest.config, trajectories, splits: manifest.splits, seeds: manifest.seeds };
    bundle.validate()?;
    Ok(bundle)
}
