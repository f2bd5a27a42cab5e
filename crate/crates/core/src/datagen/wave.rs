//! Acoustic wave equation `u_tt = c^2 Lap u` on `[0, pi]^d` with homogeneous
//! Dirichlet boundaries: second-order central differences and leapfrog.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{snapshot_times, substeps, PdeConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveSpeed {
    /// `1 + sin x sin y` in 2D, `1 + sin 2x sin y sin z` in 3D.
    #[default]
    Varying,
    Unit,
}

impl WaveSpeed {
    pub fn at(self, x: &[f64]) -> f64 {
        match (self, x.len()) {
            (WaveSpeed::Unit, _) => 1.0,
            (WaveSpeed::Varying, 2) => 1.0 + x[0].sin() * x[1].sin(),
            (WaveSpeed::Varying, _) => 1.0 + (2.0 * x[0]).sin() * x[1].sin() * x[2].sin(),
        }
    }

    pub fn max(self, dim: usize) -> f64 {
        match (self, dim) {
            (WaveSpeed::Unit, _) => 1.0,
            _ => 2.0,
        }
    }
}

/// Grid of `n` nodes per axis at `i pi / (n - 1)`.
pub fn wave_grid(dim: usize, n: usize) -> Grid {
    Grid::closed(dim, n, 0.0, std::f64::consts::PI)
}

/// `exp(-|x - x_c|^2 / 10)` on `grid`; `center` must be a grid node.
pub fn gaussian_source(grid: &Grid, center: &[f64]) -> Result<Vec<f64>> {
    if center.len() != grid.dim() {
        return Err(Error::shape(format!("center has {} coordinates, grid has {} axes", center.len(), grid.dim())));
    }
    for (axis, &c) in grid.axes.iter().zip(center) {
        let h = if axis.len() > 1 { axis[1] - axis[0] } else { 1.0 };
        if !axis.iter().any(|&x| (x - c).abs() <= 1e-9 * h) {
            return Err(Error::invalid(format!("source center coordinate {c} is not a grid node")));
        }
    }
    Ok(grid
        .points()
        .iter()
        .map(|p| {
            let r2: f64 = p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / 10.0).exp()
        })
        .collect())
}

/// Uniform draw over interior node indices (boundary nodes are pinned to 0).
pub fn random_interior_center(grid: &Grid, rng: &mut impl Rng) -> Vec<f64> {
    grid.axes.iter().map(|axis| axis[rng.random_range(1..axis.len() - 1)]).collect()
}

/// Leapfrog state on a fixed node set, exposed for energy diagnostics.
pub struct WaveStepper {
    shape: Vec<usize>,
    h: f64,
    pub dt: f64,
    c2: Vec<f64>,
    interior: Vec<bool>,
    pub prev: Vec<f64>,
    pub cur: Vec<f64>,
    started: bool,
}

impl WaveStepper {
    pub fn new(grid: &Grid, speed: WaveSpeed, u0: &[f64], dt: f64) -> Result<Self> {
        let shape = grid.shape();
        if u0.len() != grid.len() {
            return Err(Error::shape(format!("initial field has {} nodes, grid has {}", u0.len(), grid.len())));
        }
        let points = grid.points();
        let interior: Vec<bool> = (0..grid.len()).map(|p| !on_boundary(p, &shape)).collect();
        let c2 = points.iter().map(|x| speed.at(x).powi(2)).collect();
        let h = grid.axes[0][1] - grid.axes[0][0];
        let cur: Vec<f64> = u0.iter().zip(&interior).map(|(&u, &i)| if i { u } else { 0.0 }).collect();
        Ok(Self { shape, h, dt, c2, interior, prev: cur.clone(), cur, started: false })
    }

    /// Five- or seven-point Laplacian on interior nodes, zero on the boundary.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        let strides: Vec<usize> = (0..self.shape.len()).map(|a| self.shape[a + 1..].iter().product()).collect();
        let ih2 = 1.0 / (self.h * self.h);
        for p in 0..u.len() {
            if !self.interior[p] {
                continue;
            }
            let mut s = -2.0 * self.shape.len() as f64 * u[p];
            for &st in &strides {
                s += u[p - st] + u[p + st];
            }
            out[p] = s * ih2;
        }
        out
    }

    pub fn step(&mut self) {
        let lap = self.laplacian(&self.cur);
        let dt2 = self.dt * self.dt;
        let next: Vec<f64> = (0..self.cur.len())
            .map(|p| {
                if !self.interior[p] {
                    0.0
                } else if self.started {
                    2.0 * self.cur[p] - self.prev[p] + dt2 * self.c2[p] * lap[p]
                } else {
                    // zero initial velocity: Taylor step
                    self.cur[p] + 0.5 * dt2 * self.c2[p] * lap[p]
                }
            })
            .collect();
        self.prev = std::mem::replace(&mut self.cur, next);
        self.started = true;
    }

    /// Energy conserved by leapfrog between the last two levels:
    /// `1/2 |(u1 - u0)/dt|^2_{1/c^2} + 1/2 <u1, -Lap_h u0>`, times the cell volume.
    pub fn energy(&self) -> f64 {
        let lap = self.laplacian(&self.prev);
        let vol = self.h.powi(self.shape.len() as i32);
        let mut kin = 0.0;
        let mut pot = 0.0;
        for p in 0..self.cur.len() {
            let v = (self.cur[p] - self.prev[p]) / self.dt;
            kin += v * v / self.c2[p];
            pot -= self.cur[p] * lap[p];
        }
        0.5 * (kin + pot) * vol
    }
}

fn on_boundary(mut p: usize, shape: &[usize]) -> bool {
    for &n in shape.iter().rev() {
        let i = p % n;
        if i == 0 || i == n - 1 {
            return true;
        }
        p /= n;
    }
    false
}

pub fn solve_wave(cfg: &PdeConfig, u0: &[f64]) -> Result<Trajectory> {
    let dim = cfg.grid.len();
    let n = cfg.grid[0];
    if !(2..=3).contains(&dim) || cfg.grid.iter().any(|&m| m != n) || n < 3 {
        return Err(Error::invalid(format!("wave solver needs a cubic 2D or 3D grid, got {:?}", cfg.grid)));
    }
    let grid = wave_grid(dim, n);
    let h = std::f64::consts::PI / (n - 1) as f64;
    let dt_snap = cfg.t_final / cfg.n_steps as f64;
    let dt_max = cfg.cfl_safety * h / (cfg.wave_speed.max(dim) * (dim as f64).sqrt());
    let sub = substeps(dt_snap, dt_max, cfg.max_substeps)?;
    let mut st = WaveStepper::new(&grid, cfg.wave_speed, u0, dt_snap / sub as f64)?;
    let mut data = st.cur.clone();
    for step in 0..cfg.n_steps {
        for _ in 0..sub {
            st.step();
        }
        if st.cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("wave field non-finite at snapshot {}", step + 1)));
        }
        data.extend_from_slice(&st.cur);
    }
    let mut shape = vec![cfg.n_steps + 1];
    shape.extend(&cfg.grid);
    Ok(Trajectory { grid, times: snapshot_times(cfg.t_final, cfg.n_steps), fields: Tensor::from_vec(&shape, data) })
}
