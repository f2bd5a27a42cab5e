//! Proper orthogonal decomposition of gridded series and the reduced-model
//! pipeline: project snapshots onto the leading modes, learn the modal
//! coefficients with a bundled 1D model, lift rollouts back to fields.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetBundle, PdeConfig, Split, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{atomic_write, decode_f32, encode_f32, read_bytes, read_json, sha256_hex, write_json};
use crate::model::{Model, ModelConfig};
use crate::nn::Tensor;
use crate::report::EvalReport;
use crate::rollout::{rel_l2_error, rollout_bundled, RolloutConfig};
use crate::training::{train, OptimizerConfig, Strategy, TrainConfig, TrainOutcome};

pub const BASIS_VERSION: u32 = 1;
const BASIS_PAYLOAD: &str = "basis.bin";

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub grid: Grid,
    pub mean: Vec<f64>,
    /// Orthonormal spatial modes, most energetic first.
    pub modes: Vec<Vec<f64>>,
    /// Squared singular values of the centered snapshot matrix, retained modes only.
    pub eigenvalues: Vec<f64>,
    /// Sum of all squared singular values.
    pub total_energy: f64,
    /// Mode count asked for; larger than `modes.len()` when the data had lower rank.
    pub requested: usize,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    pub fn was_truncated(&self) -> bool {
        self.requested > self.rank()
    }

    /// Fraction of the centered energy captured by the leading `r` modes.
    pub fn energy_fraction(&self, r: usize) -> f64 {
        self.eigenvalues.iter().take(r).sum::<f64>() / self.total_energy
    }

    pub fn project(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.mean.len() {
            return Err(Error::shape(format!("field has {} values, basis expects {}", field.len(), self.mean.len())));
        }
        Ok(self.modes.iter().map(|m| m.iter().zip(field).zip(&self.mean).map(|((p, f), c)| p * (f - c)).sum()).collect())
    }

    pub fn lift(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.rank() {
            return Err(Error::shape(format!("{} coefficients for {} modes", coeffs.len(), self.rank())));
        }
        let mut out = self.mean.clone();
        for (c, m) in coeffs.iter().zip(&self.modes) {
            out.iter_mut().zip(m).for_each(|(o, p)| *o += c * p);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut values = self.mean.clone();
        self.modes.iter().for_each(|m| values.extend_from_slice(m));
        let bytes = encode_f32(&values);
        atomic_write(&dir.join(BASIS_PAYLOAD), &bytes)?;
        let manifest = BasisManifest {
            format_version: BASIS_VERSION,
            grid: self.grid.clone(),
            eigenvalues: self.eigenvalues.clone(),
            total_energy: self.total_energy,
            requested: self.requested,
            payload: BASIS_PAYLOAD.into(),
            sha256: sha256_hex(&bytes),
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(&dir.join("manifest.json"))?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != BASIS_VERSION {
            return Err(Error::Schema { found, expected: BASIS_VERSION });
        }
        let m: BasisManifest = serde_json::from_value(value).map_err(|e| Error::Json { path: dir.join("manifest.json"), source: e })?;
        let bytes = read_bytes(&dir.join(&m.payload))?;
        if sha256_hex(&bytes) != m.sha256 {
            return Err(Error::Corrupt(format!("checksum mismatch in {}", dir.join(&m.payload).display())));
        }
        let values = decode_f32(&bytes)?;
        let s = m.grid.len();
        if values.len() != s * (m.eigenvalues.len() + 1) {
            return Err(Error::Corrupt(format!("basis payload has {} values, expected {}", values.len(), s * (m.eigenvalues.len() + 1))));
        }
        let mut chunks = values.chunks(s).map(<[f64]>::to_vec);
        let mean = chunks.next().expect("nonempty");
        Ok(Self { grid: m.grid, mean, modes: chunks.collect(), eigenvalues: m.eigenvalues, total_energy: m.total_energy, requested: m.requested })
    }
}

#[derive(Serialize, Deserialize)]
struct BasisManifest {
    format_version: u32,
    grid: Grid,
    eigenvalues: Vec<f64>,
    total_energy: f64,
    requested: usize,
    payload: String,
    sha256: String,
}

/// Leading `r` modes of the mean-centered snapshots. The eigenproblem is
/// solved on whichever Gram matrix is smaller; `r` is reduced to the numerical
/// rank when the data cannot support it.
pub fn compute_pod(grid: &Grid, snapshots: &[&[f64]], r: usize) -> Result<PodBasis> {
    let t = snapshots.len();
    let s = grid.len();
    if t < 2 {
        return Err(Error::invalid("POD needs at least two snapshots"));
    }
    if r == 0 || r > t.min(s) {
        return Err(Error::invalid(format!("mode count must satisfy 1 <= r <= min({t}, {s}), got {r}")));
    }
    if let Some(bad) = snapshots.iter().position(|x| x.len() != s) {
        return Err(Error::shape(format!("snapshot {bad} has {} values, grid has {s}", snapshots[bad].len())));
    }
    let mut mean = vec![0.0; s];
    for x in snapshots {
        mean.iter_mut().zip(*x).for_each(|(m, v)| *m += v / t as f64);
    }
    let x = DMatrix::from_fn(t, s, |i, j| snapshots[i][j] - mean[j]);
    let total_energy = x.norm_squared();
    let (values, vectors, small_is_time) = if t <= s {
        let e = SymmetricEigen::new(&x * x.transpose());
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let e = SymmetricEigen::new(x.transpose() * &x);
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let top = values[order[0]].max(0.0);
    if !(top > 0.0) {
        return Err(Error::invalid("snapshots are constant; no modes to extract"));
    }
    let rank = order.iter().take_while(|&&i| values[i] > RANK_TOL * top).count();
    let keep = r.min(rank);
    let mut modes = Vec::with_capacity(keep);
    let mut eigenvalues = Vec::with_capacity(keep);
    for &i in &order[..keep] {
        let v = vectors.column(i);
        let phi: Vec<f64> = if small_is_time { (x.transpose() * v).iter().copied().collect() } else { v.iter().copied().collect() };
        modes.push(phi);
        eigenvalues.push(values[i].max(0.0));
    }
    orthonormalize(&mut modes);
    orthonormalize(&mut modes);
    Ok(PodBasis { grid: grid.clone(), mean, modes, eigenvalues, total_energy, requested: r })
}

/// Modified Gram-Schmidt in place.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let d: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Sub-trajectories of a series with `n_snapshots` samples and window `lf`:
/// one per start `s` with `s + lf` still inside the series.
pub fn pod_windows(n_snapshots: usize, lf: usize) -> usize {
    n_snapshots.saturating_sub(lf)
}

/// Cut one long series into consecutive train, validation and test pieces of
/// `steps[k]` steps each. Neighbouring pieces share their boundary snapshot,
/// and every piece restarts its clock at zero on the series' time axis.
pub fn split_in_time(series: &Trajectory, steps: [usize; 3]) -> Result<DatasetBundle> {
    let total: usize = steps.iter().sum();
    if steps.contains(&0) || total > series.n_steps() {
        return Err(Error::invalid(format!("cannot cut {steps:?} steps from a series of {}", series.n_steps())));
    }
    let dt = series.times[1] - series.times[0];
    if series.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(Error::invalid("time splitting needs uniformly spaced snapshots"));
    }
    let mut start = 0;
    let mut trajectories = Vec::new();
    for &k in &steps {
        let mut data = Vec::with_capacity((k + 1) * series.spatial_len());
        for n in start..=start + k {
            data.extend_from_slice(series.snapshot(n));
        }
        let mut shape = vec![k + 1];
        shape.extend(series.grid.shape());
        trajectories.push(Trajectory {
            grid: series.grid.clone(),
            times: series.times[..=k].to_vec(),
            fields: Tensor::from_vec(&shape, data),
        });
        start += k;
    }
    Ok(DatasetBundle {
        config: PdeConfig::external(dt * steps[0] as f64, steps[0], series.grid.shape()),
        trajectories,
        splits: vec![Split::Train, Split::Val, Split::Test],
        seeds: vec![0; 3],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PodPipelineConfig {
    pub modes: usize,
    pub lf: usize,
    /// Steps rolled out on each test trajectory.
    pub horizon: usize,
    /// Scale each coefficient to unit variance over the training snapshots.
    pub normalize: bool,
    /// `grid_shape` and `coord_bounds` are replaced by the coefficient grid.
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for PodPipelineConfig {
    fn default() -> Self {
        Self {
            modes: 5,
            lf: 365,
            horizon: 365,
            normalize: true,
            model: ModelConfig { channel_mults: vec![1], ..ModelConfig::default() },
            optimizer: OptimizerConfig::default(),
        }
    }
}

pub struct PodOutcome {
    pub basis: PodBasis,
    /// Divisors applied to each coefficient before training.
    pub scales: Vec<f64>,
    pub model: Model,
    pub training: TrainOutcome,
    pub report: EvalReport,
    /// Mean field-space error over test trajectories at steps `0..=horizon`.
    pub step_errors: Vec<f64>,
    /// Mean of `step_errors` over steps `1..=horizon`.
    pub mean_error: f64,
}

/// Coefficient series of `traj`, divided by `scales`, on a 1D grid of modes.
fn coefficient_trajectory(basis: &PodBasis, scales: &[f64], traj: &Trajectory) -> Result<Trajectory> {
    let r = basis.rank();
    let mut data = Vec::with_capacity((traj.n_steps() + 1) * r);
    for n in 0..=traj.n_steps() {
        let c = basis.project(traj.snapshot(n))?;
        data.extend(c.iter().zip(scales).map(|(c, s)| c / s));
    }
    Ok(Trajectory { grid: Grid::closed(1, r, 0.0, 1.0), times: traj.times.clone(), fields: Tensor::from_vec(&[traj.n_steps() + 1, r], data) })
}

/// Basis from the train split, bundled training on the coefficients, then
/// rollouts on the test split scored in field space.
pub fn pod_pipeline(bundle: &DatasetBundle, cfg: &PodPipelineConfig, variant_label: &str) -> Result<PodOutcome> {
    bundle.validate()?;
    let train_trajs = bundle.select(Split::Train);
    let test_trajs = bundle.select(Split::Test);
    if train_trajs.is_empty() || test_trajs.is_empty() || bundle.select(Split::Val).is_empty() {
        return Err(Error::invalid("POD pipeline needs train, val and test trajectories"));
    }
    if let Some(short) = test_trajs.iter().find(|t| t.n_steps() < cfg.horizon) {
        return Err(Error::invalid(format!("test reference has {} steps, horizon is {}", short.n_steps(), cfg.horizon)));
    }
    let snaps: Vec<&[f64]> = train_trajs.iter().flat_map(|t| (0..=t.n_steps()).map(move |n| t.snapshot(n))).collect();
    let basis = compute_pod(bundle.grid(), &snaps, cfg.modes)?;
    let r = basis.rank();
    let scales: Vec<f64> = if cfg.normalize {
        basis.eigenvalues.iter().map(|l| (l / snaps.len() as f64).sqrt()).collect()
    } else {
        vec![1.0; r]
    };

    let trajectories = bundle.trajectories.iter().map(|t| coefficient_trajectory(&basis, &scales, t)).collect::<Result<Vec<_>>>()?;
    let nt = train_trajs[0].n_steps();
    let coeffs = DatasetBundle {
        config: PdeConfig::external(bundle.config.t_final, nt, vec![r]),
        trajectories,
        splits: bundle.splits.clone(),
        seeds: bundle.seeds.clone(),
    };
    let model_cfg = ModelConfig { grid_shape: vec![r], coord_bounds: vec![[0.0, 1.0]], ..cfg.model.clone() };
    let mut model = Model::new(model_cfg)?;
    let train_cfg = TrainConfig {
        strategy: Strategy::Bundled { lf: cfg.lf, nt, condition_on_offset: true, alpha: 1.0 },
        loss: Default::default(),
        optimizer: cfg.optimizer.clone(),
        max_val_samples: 512,
    };
    let training = train(&mut model, &coeffs, &train_cfg, |_| {})?;

    let dt = bundle.times()[1] - bundle.times()[0];
    let roll_cfg = RolloutConfig { lf: cfg.lf.min(cfg.horizon), horizon: cfg.horizon, train_horizon: nt, dt };
    let mut per_traj = Vec::with_capacity(test_trajs.len());
    for (m, t) in bundle.indices(Split::Test).into_iter().zip(&test_trajs) {
        let c0 = coeffs.trajectories[m].snapshot(0);
        let roll = rollout_bundled(&model, c0, &roll_cfg)?;
        if let Some(d) = roll.diagnostic {
            return Err(Error::Numeric(d));
        }
        let errs = roll
            .states
            .data()
            .chunks(r)
            .enumerate()
            .map(|(n, c)| {
                let unscaled: Vec<f64> = c.iter().zip(&scales).map(|(c, s)| c * s).collect();
                rel_l2_error(&basis.lift(&unscaled)?, t.snapshot(n))
            })
            .collect::<Result<Vec<f64>>>()?;
        per_traj.push(errs);
    }
    let mut report = EvalReport::default();
    let mut step_errors = Vec::with_capacity(cfg.horizon + 1);
    for n in 0..=cfg.horizon {
        let col: Vec<f64> = per_traj.iter().map(|e| e[n]).collect();
        report.push("pod", variant_label, "step", n as f64, &col);
        step_errors.push(col.iter().sum::<f64>() / col.len() as f64);
    }
    let mean_error = step_errors[1..].iter().sum::<f64>() / cfg.horizon as f64;
    Ok(PodOutcome { basis, scales, model, training, report, step_errors, mean_error })
}
