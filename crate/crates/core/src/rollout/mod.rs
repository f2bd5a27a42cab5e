//! Continuous-time queries, bundled rollouts and the evaluation protocols.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{inject_noise, NoiseConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Tensor;
use crate::report::EvalReport;

/// Largest number of times evaluated in one forward pass.
const QUERY_CHUNK: usize = 32;

/// One forward pass: the field at time `t` starting from `x0`.
pub fn query(model: &Model, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("query time must be finite, got {t}")));
    }
    Ok(query_batch(model, x0, &[t])?.into_data())
}

/// Fields at every time in `times` from one `x0`; `(times.len(), grid...)`.
pub fn query_batch(model: &Model, x0: &[f64], times: &[f64]) -> Result<Tensor> {
    let n = model.config.n_points();
    if x0.len() != n {
        return Err(Error::shape(format!("initial field has {} values, model grid has {n}", x0.len())));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("query time must be finite, got {t}")));
    }
    let mut data = Vec::with_capacity(times.len() * n);
    for chunk in times.chunks(QUERY_CHUNK) {
        let mut shape = vec![chunk.len()];
        shape.extend(&model.config.grid_shape);
        let x = Tensor::from_vec(&shape, x0.repeat(chunk.len()));
        data.extend(model.forward(&x, chunk)?.into_data());
    }
    let mut shape = vec![times.len()];
    shape.extend(&model.config.grid_shape);
    Ok(Tensor::from_vec(&shape, data))
}

/// `||truth - pred|| / ||truth||`.
pub fn rel_l2_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("prediction has {} values, truth {}", pred.len(), truth.len())));
    }
    let den = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::invalid("relative error undefined for a zero or non-finite reference"));
    }
    let num = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    /// Steps covered by one bundle before feeding back.
    pub lf: usize,
    /// Total steps produced.
    pub horizon: usize,
    /// Last step seen in training; informational for reports.
    pub train_horizon: usize,
    /// Physical time per step.
    pub dt: f64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lf == 0 || self.lf > self.horizon {
            return Err(Error::invalid(format!("rollout needs 1 <= lf <= horizon, got lf={} horizon={}", self.lf, self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("rollout dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// `ceil(horizon / lf)`.
    pub fn feedback_steps(&self) -> usize {
        self.horizon.div_ceil(self.lf)
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    /// `(produced + 1, grid...)`, starting with the initial field.
    pub states: Tensor,
    /// Bundles evaluated.
    pub bundles: usize,
    /// Set when a non-finite state stopped the rollout early.
    pub diagnostic: Option<String>,
}

impl Rollout {
    pub fn produced(&self) -> usize {
        self.states.shape()[0] - 1
    }
}

/// From the current state, query offsets `dt, ..., lf dt`, keep all of them
/// and restart from the last. The final bundle stops at `horizon`.
pub fn rollout_bundled(model: &Model, x0: &[f64], cfg: &RolloutConfig) -> Result<Rollout> {
    cfg.validate()?;
    let n = model.config.n_points();
    let mut data = x0.to_vec();
    let mut state = x0.to_vec();
    let mut done = 0;
    let mut bundles = 0;
    let mut diagnostic = None;
    while done < cfg.horizon {
        let k = cfg.lf.min(cfg.horizon - done);
        let offsets: Vec<f64> = (1..=k).map(|j| j as f64 * cfg.dt).collect();
        let out = query_batch(model, &state, &offsets)?;
        bundles += 1;
        let out = out.into_data();
        if let Some(bad) = out.chunks(n).position(|f| f.iter().any(|v| !v.is_finite())) {
            data.extend_from_slice(&out[..bad * n]);
            done += bad;
            diagnostic = Some(format!("non-finite state at step {}; rollout truncated", done + 1));
            break;
        }
        state = out[(k - 1) * n..].to_vec();
        data.extend(out);
        done += k;
    }
    let mut shape = vec![done + 1];
    shape.extend(&model.config.grid_shape);
    Ok(Rollout { states: Tensor::from_vec(&shape, data), bundles, diagnostic })
}

/// Predictions at steps `stride, 2 stride, ..., n_steps` of `reference`.
/// Conditioned models are queried directly at each time; the unconditioned
/// baseline only knows its training step, so it is applied repeatedly.
fn predict_snapshots(model: &Model, x0: &[f64], reference: &Trajectory, stride: usize) -> Result<Vec<Vec<f64>>> {
    let steps: Vec<usize> = (stride..=reference.n_steps()).step_by(stride).collect();
    if model.is_conditioned() {
        let times: Vec<f64> = steps.iter().map(|&n| reference.times[n] - reference.times[0]).collect();
        let out = query_batch(model, x0, &times)?;
        Ok(out.data().chunks(x0.len()).map(<[f64]>::to_vec).collect())
    } else {
        let mut state = x0.to_vec();
        let mut out = Vec::with_capacity(steps.len());
        for _ in &steps {
            state = query(model, &state, 0.0)?;
            out.push(state.clone());
        }
        Ok(out)
    }
}

/// Mean over snapshots of the relative error along one trajectory.
fn trajectory_error(model: &Model, x0: &[f64], reference: &Trajectory, stride: usize) -> Result<f64> {
    let preds = predict_snapshots(model, x0, reference, stride)?;
    let mut sum = 0.0;
    for (i, p) in preds.iter().enumerate() {
        sum += rel_l2_error(p, reference.snapshot((i + 1) * stride))?;
    }
    Ok(sum / preds.len() as f64)
}

fn check_references(refs: &[&Trajectory]) -> Result<usize> {
    let first = refs.first().ok_or_else(|| Error::invalid("evaluation needs at least one test trajectory"))?;
    if refs.iter().any(|r| r.n_steps() != first.n_steps()) {
        return Err(Error::invalid("test trajectories differ in length"));
    }
    Ok(first.n_steps())
}

/// Error per test trajectory at resolution `n_steps / stride`.
pub fn per_trajectory_errors(model: &Model, refs: &[&Trajectory], stride: usize) -> Result<Vec<f64>> {
    refs.par_iter().map(|r| trajectory_error(model, r.snapshot(0), r, stride)).collect()
}

/// Zero-shot temporal resolution sweep. References hold the finest
/// resolution; each requested `N_t^test` must divide their step count.
pub fn eval_superresolution(model: &Model, refs: &[&Trajectory], resolutions: &[usize], scenario: &str, variant: &str) -> Result<EvalReport> {
    let fine = check_references(refs)?;
    let mut report = EvalReport::default();
    for &nt in resolutions {
        if nt == 0 || nt > fine || fine % nt != 0 {
            return Err(Error::invalid(format!(
                "resolution {nt} is not available from references with {fine} steps; regenerate at a finer resolution"
            )));
        }
        let errs = per_trajectory_errors(model, refs, fine / nt)?;
        report.push(scenario, variant, "nt_test", nt as f64, &errs);
    }
    Ok(report)
}

/// Per-step errors of bundled rollouts against the solver references,
/// `errors[m][n]` for `n = 0..=horizon`.
pub fn extrapolation_errors(model: &Model, refs: &[&Trajectory], cfg: &RolloutConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let steps = check_references(refs)?;
    if steps < cfg.horizon {
        return Err(Error::invalid(format!("references stop at step {steps}, rollout horizon is {}", cfg.horizon)));
    }
    refs.par_iter()
        .map(|r| {
            let roll = rollout_bundled(model, r.snapshot(0), cfg)?;
            if let Some(d) = roll.diagnostic {
                return Err(Error::Numeric(d));
            }
            let n = r.spatial_len();
            roll.states.data().chunks(n).enumerate().map(|(i, p)| rel_l2_error(p, r.snapshot(i))).collect()
        })
        .collect()
}

/// Error-vs-step curve, one row per step, mean and std over trajectories.
pub fn eval_extrapolation(model: &Model, refs: &[&Trajectory], cfg: &RolloutConfig, scenario: &str, variant: &str) -> Result<EvalReport> {
    let errs = extrapolation_errors(model, refs, cfg)?;
    let mut report = EvalReport::default();
    for n in 0..=cfg.horizon {
        let col: Vec<f64> = errs.iter().map(|e| e[n]).collect();
        report.push(scenario, variant, "step", n as f64, &col);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweep {
    pub gammas: Vec<f64>,
    /// Dataset standard deviation, measured on the training split.
    pub sigma_d: f64,
    pub seeds: Vec<u64>,
}

/// Noise on the test inputs only; targets stay clean. Each row averages the
/// per-trajectory errors over seeds, then reports mean and std over
/// trajectories. With `gamma = 0` every seed gives the clean input, so it is
/// evaluated once and the row equals the clean evaluation exactly.
pub fn noise_sweep(model: &Model, refs: &[&Trajectory], sweep: &NoiseSweep, scenario: &str, variant: &str) -> Result<EvalReport> {
    check_references(refs)?;
    if sweep.seeds.is_empty() {
        return Err(Error::invalid("noise sweep needs at least one seed"));
    }
    if let Some(g) = sweep.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {g}")));
    }
    let mut report = EvalReport::default();
    for &gamma in &sweep.gammas {
        let seeds: &[u64] = if gamma == 0.0 { &sweep.seeds[..1] } else { &sweep.seeds };
        let errs: Vec<f64> = refs
            .par_iter()
            .enumerate()
            .map(|(m, r)| {
                let mut sum = 0.0;
                for &seed in seeds {
                    let cfg = NoiseConfig { gamma, sigma_d: sweep.sigma_d, seed: noise_seed(seed, m) };
                    let x0 = inject_noise(r.snapshot(0), &cfg)?;
                    sum += trajectory_error(model, &x0, r, 1)?;
                }
                Ok(sum / seeds.len() as f64)
            })
            .collect::<Result<_>>()?;
        report.push(scenario, variant, "gamma", gamma, &errs);
    }
    Ok(report)
}

/// Distinct stream per (sweep seed, trajectory).
fn noise_seed(seed: u64, traj: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ traj as u64
}
