//! PDE datasets: random initial conditions, reference solvers, pair assembly,
//! noise injection, splits and the on-disk container.

mod burgers;
mod container;
mod grf;
mod navier_stokes;
mod noise;
mod pairs;
pub mod spectral;
mod split;
mod wave;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::Tensor;

pub use burgers::solve_burgers;
pub use container::{load_dataset, save_dataset, DATASET_SCHEMA_VERSION};
pub use grf::{sample_grf, GrfSpec};
pub use navier_stokes::{solve_navier_stokes, Forcing};
pub use noise::{dataset_std, inject_noise, NoiseConfig};
pub use pairs::{assemble_pairs, Pair};
pub use split::{split_dataset, Split};
pub use wave::{gaussian_source, random_interior_center, solve_wave, wave_grid, WaveSpeed, WaveStepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Burgers,
    NavierStokes,
    Wave2d,
    Wave3d,
    /// User-supplied gridded series with no solver behind it.
    External,
}

impl PdeKind {
    /// Spatial dimension; external series take theirs from the grid.
    pub fn dimension(self) -> usize {
        match self {
            PdeKind::Burgers => 1,
            PdeKind::NavierStokes | PdeKind::Wave2d => 2,
            PdeKind::Wave3d => 3,
            PdeKind::External => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub kind: PdeKind,
    #[serde(default)]
    pub viscosity: f64,
    pub t_final: f64,
    /// Stored snapshots after the initial one.
    pub n_steps: usize,
    pub grid: Vec<usize>,
    #[serde(default)]
    pub forcing: Forcing,
    #[serde(default)]
    pub wave_speed: WaveSpeed,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    /// Largest number of solver substeps allowed per snapshot interval.
    #[serde(default = "default_max_substeps")]
    pub max_substeps: usize,
}

fn default_cfl() -> f64 {
    0.5
}

fn default_max_substeps() -> usize {
    100_000
}

impl PdeConfig {
    pub fn burgers(viscosity: f64, t_final: f64, n_steps: usize, n: usize) -> Self {
        Self::new(PdeKind::Burgers, viscosity, t_final, n_steps, vec![n])
    }

    pub fn navier_stokes(viscosity: f64, t_final: f64, n_steps: usize, n: usize) -> Self {
        Self::new(PdeKind::NavierStokes, viscosity, t_final, n_steps, vec![n, n])
    }

    pub fn wave(dim: usize, t_final: f64, n_steps: usize, n: usize) -> Self {
        let kind = if dim == 3 { PdeKind::Wave3d } else { PdeKind::Wave2d };
        Self::new(kind, 0.0, t_final, n_steps, vec![n; dim])
    }

    /// Metadata for an imported series on `[0, 1]^d`.
    pub fn external(t_final: f64, n_steps: usize, grid: Vec<usize>) -> Self {
        Self::new(PdeKind::External, 0.0, t_final, n_steps, grid)
    }

    fn new(kind: PdeKind, viscosity: f64, t_final: f64, n_steps: usize, grid: Vec<usize>) -> Self {
        Self {
            kind,
            viscosity,
            t_final,
            n_steps,
            grid,
            forcing: Forcing::Diagonal,
            wave_speed: WaveSpeed::Varying,
            cfl_safety: default_cfl(),
            max_substeps: default_max_substeps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(Error::invalid(format!("t_final must be > 0, got {}", self.t_final)));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        if !(self.viscosity.is_finite() && self.viscosity >= 0.0) {
            return Err(Error::invalid(format!("viscosity must be >= 0, got {}", self.viscosity)));
        }
        if self.kind == PdeKind::External {
            if !(1..=3).contains(&self.grid.len()) || self.grid.iter().any(|&n| n < 2) {
                return Err(Error::invalid(format!("external grid must have 1 to 3 axes of >= 2 nodes, got {:?}", self.grid)));
            }
        } else if self.grid.len() != self.kind.dimension() {
            return Err(Error::invalid(format!("{:?} needs {} grid sizes, got {:?}", self.kind, self.kind.dimension(), self.grid)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::invalid(format!("cfl_safety must be in (0, 1], got {}", self.cfl_safety)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        match self.kind {
            PdeKind::Burgers | PdeKind::NavierStokes => Grid::periodic_unit(self.grid.len(), self.grid[0]),
            PdeKind::Wave2d | PdeKind::Wave3d => wave_grid(self.grid.len(), self.grid[0]),
            PdeKind::External => Grid { axes: self.grid.iter().map(|&n| Grid::closed(1, n, 0.0, 1.0).axes[0].clone()).collect() },
        }
    }

    /// Physical extent of each axis, for coordinate normalization.
    pub fn domain(&self) -> Vec<[f64; 2]> {
        let hi = match self.kind {
            PdeKind::Burgers | PdeKind::NavierStokes | PdeKind::External => 1.0,
            PdeKind::Wave2d | PdeKind::Wave3d => std::f64::consts::PI,
        };
        vec![[0.0, hi]; self.grid.len()]
    }

    /// Draw the initial condition used by dataset generation.
    pub fn initial_condition(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        match self.kind {
            PdeKind::Burgers => sample_grf(&GrfSpec::burgers(self.grid[0]), rng),
            PdeKind::NavierStokes => sample_grf(&GrfSpec::navier_stokes(self.grid[0]), rng),
            PdeKind::Wave2d | PdeKind::Wave3d => {
                let grid = self.grid();
                let center = random_interior_center(&grid, rng);
                gaussian_source(&grid, &center)
            }
            PdeKind::External => Err(Error::invalid("external series have no initial-condition sampler")),
        }
    }

    pub fn solve(&self, u0: &[f64]) -> Result<Trajectory> {
        self.validate()?;
        match self.kind {
            PdeKind::Burgers => solve_burgers(self, u0),
            PdeKind::NavierStokes => solve_navier_stokes(self, u0),
            PdeKind::Wave2d | PdeKind::Wave3d => solve_wave(self, u0),
            PdeKind::External => Err(Error::invalid("external series have no solver")),
        }
    }
}

/// `n_steps + 1` equispaced times from exactly 0 to exactly `t_final`.
pub fn snapshot_times(t_final: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|n| if n == n_steps { t_final } else { t_final * n as f64 / n_steps as f64 }).collect()
}

/// Substeps per snapshot interval so that each step is at most `dt_max`.
pub(crate) fn substeps(dt_snap: f64, dt_max: f64, limit: usize) -> Result<usize> {
    let need = (dt_snap / dt_max).ceil().max(1.0);
    if !need.is_finite() || need > limit as f64 {
        return Err(Error::Cfl { required: if need.is_finite() { need as usize } else { usize::MAX }, limit });
    }
    Ok(need as usize)
}

/// One PDE solution: `fields` is `(T + 1, spatial...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub fields: Tensor,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn spatial_len(&self) -> usize {
        self.grid.len()
    }

    pub fn snapshot(&self, n: usize) -> &[f64] {
        let s = self.spatial_len();
        &self.fields.data()[n * s..(n + 1) * s]
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.first() != Some(&0.0) {
            return Err(Error::invalid("trajectory must start at t = 0"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        let mut shape = vec![self.times.len()];
        shape.extend(self.grid.shape());
        if self.fields.shape() != shape.as_slice() {
            return Err(Error::shape(format!("fields {:?} vs expected {shape:?}", self.fields.shape())));
        }
        if !self.fields.all_finite() {
            return Err(Error::Numeric("trajectory contains non-finite values".into()));
        }
        Ok(())
    }

    /// Keep every `stride`-th snapshot; `n_steps` must be divisible by `stride`.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if stride == 0 || self.n_steps() % stride != 0 {
            return Err(Error::invalid(format!("cannot subsample {} steps by {stride}", self.n_steps())));
        }
        let s = self.spatial_len();
        let keep: Vec<usize> = (0..=self.n_steps()).step_by(stride).collect();
        let mut data = Vec::with_capacity(keep.len() * s);
        for &n in &keep {
            data.extend_from_slice(self.snapshot(n));
        }
        let mut shape = vec![keep.len()];
        shape.extend(self.grid.shape());
        Ok(Trajectory { grid: self.grid.clone(), times: keep.iter().map(|&n| self.times[n]).collect(), fields: Tensor::from_vec(&shape, data) })
    }

    /// Snapshots `0..=last` only.
    pub fn truncate(&self, last: usize) -> Trajectory {
        let s = self.spatial_len();
        let mut shape = vec![last + 1];
        shape.extend(self.grid.shape());
        Trajectory {
            grid: self.grid.clone(),
            times: self.times[..=last].to_vec(),
            fields: Tensor::from_vec(&shape, self.fields.data()[..(last + 1) * s].to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub config: PdeConfig,
    pub trajectories: Vec<Trajectory>,
    pub splits: Vec<Split>,
    pub seeds: Vec<u64>,
}

impl DatasetBundle {
    pub fn grid(&self) -> &Grid {
        &self.trajectories[0].grid
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectories[0].times
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.splits[m] == split).collect()
    }

    pub fn select(&self, split: Split) -> Vec<&Trajectory> {
        self.indices(split).into_iter().map(|m| &self.trajectories[m]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("dataset has no trajectories"));
        }
        if self.splits.len() != self.len() || self.seeds.len() != self.len() {
            return Err(Error::invalid("split and seed ledgers must have one entry per trajectory"));
        }
        for t in &self.trajectories {
            t.validate()?;
            if t.grid != *self.grid() {
                return Err(Error::invalid("all trajectories must share one grid"));
            }
        }
        let longest = self.trajectories.iter().max_by_key(|t| t.n_steps()).expect("nonempty");
        if self.trajectories.iter().any(|t| !longest.times.starts_with(&t.times)) {
            return Err(Error::invalid("trajectory time axes must be prefixes of one common axis"));
        }
        Ok(())
    }

    /// Every trajectory subsampled in time by `stride`.
    pub fn subsample(&self, stride: usize) -> Result<DatasetBundle> {
        let trajectories = self.trajectories.iter().map(|t| t.subsample(stride)).collect::<Result<Vec<_>>>()?;
        let mut config = self.config.clone();
        config.n_steps /= stride;
        Ok(DatasetBundle { config, trajectories, splits: self.splits.clone(), seeds: self.seeds.clone() })
    }
}

/// Per-trajectory seeds drawn from the base seed, so a trajectory depends only
/// on `(config, base_seed, index)`.
pub fn trajectory_seeds(base_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    (0..count).map(|_| rng.random()).collect()
}

/// Solve `count` trajectories in parallel. Fields are rounded to f32 so the
/// in-memory bundle equals its on-disk form. All trajectories start as
/// `Split::Train`.
pub fn generate(cfg: &PdeConfig, count: usize, base_seed: u64) -> Result<DatasetBundle> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    let seeds = trajectory_seeds(base_seed, count);
    let trajectories = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let u0 = cfg.initial_condition(&mut rng)?;
            let mut t = cfg.solve(&u0)?;
            t.fields.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetBundle { config: cfg.clone(), trajectories, splits: vec![Split::Train; count], seeds })
}
