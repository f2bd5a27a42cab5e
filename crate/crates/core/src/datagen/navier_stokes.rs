//! 2D incompressible Navier-Stokes in vorticity form on the periodic unit
//! square. Crank-Nicolson viscosity, Heun predictor-corrector advection.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{dealiased, wavenumber, Fft2};
use super::{snapshot_times, substeps, PdeConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    /// `0.1 (sin(2 pi (x + y)) + cos(2 pi (x + y)))`.
    #[default]
    Diagonal,
    None,
}

impl Forcing {
    pub fn field(self, n: usize) -> Vec<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        (0..n * n)
            .map(|p| match self {
                Forcing::Diagonal => {
                    let s = two_pi * ((p / n) as f64 + (p % n) as f64) / n as f64;
                    0.1 * (s.sin() + s.cos())
                }
                Forcing::None => 0.0,
            })
            .collect()
    }
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

struct Vorticity {
    n: usize,
    fft: Fft2,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<bool>,
}

impl Vorticity {
    fn new(n: usize) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                kx[i * n + j] = two_pi * wavenumber(i, n) as f64;
                ky[i * n + j] = two_pi * wavenumber(j, n) as f64;
                mask[i * n + j] = dealiased(i, n) && dealiased(j, n);
            }
        }
        let k2 = kx.iter().zip(&ky).map(|(a, b)| a * a + b * b).collect();
        Self { n, fft: Fft2::new(n), kx, ky, k2, mask }
    }

    fn spectral_derivative(&self, wh: &[Complex64], f: impl Fn(usize) -> Complex64) -> Vec<f64> {
        self.fft.inverse(wh.iter().enumerate().map(|(p, v)| v * f(p)).collect())
    }

    /// Velocity `(u, v) = (psi_y, -psi_x)` with `-Lap psi = w`.
    fn velocity(&self, wh: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let psi: Vec<Complex64> = wh.iter().zip(&self.k2).map(|(w, &k2)| if k2 > 0.0 { w / k2 } else { ZERO }).collect();
        let u = self.spectral_derivative(&psi, |p| Complex64::new(0.0, self.ky[p]));
        let v = self.spectral_derivative(&psi, |p| Complex64::new(0.0, -self.kx[p]));
        (u, v)
    }

    /// `-(u . grad w)`, dealiased, with the mean mode removed.
    fn nonlinear(&self, wh: &[Complex64]) -> Vec<Complex64> {
        let trunc: Vec<Complex64> = wh.iter().zip(&self.mask).map(|(v, &m)| if m { *v } else { ZERO }).collect();
        let (u, v) = self.velocity(&trunc);
        let wx = self.spectral_derivative(&trunc, |p| Complex64::new(0.0, self.kx[p]));
        let wy = self.spectral_derivative(&trunc, |p| Complex64::new(0.0, self.ky[p]));
        let adv: Vec<f64> = (0..self.n * self.n).map(|p| -(u[p] * wx[p] + v[p] * wy[p])).collect();
        let mut out = self.fft.forward(&adv);
        for (o, &m) in out.iter_mut().zip(&self.mask) {
            if !m {
                *o = ZERO;
            }
        }
        out[0] = ZERO;
        out
    }

    fn step(&self, wh: &mut [Complex64], fh: &[Complex64], nu: f64, dt: f64) {
        let n0 = self.nonlinear(wh);
        let a: Vec<f64> = self.k2.iter().map(|k2| 1.0 - 0.5 * dt * nu * k2).collect();
        let b: Vec<f64> = self.k2.iter().map(|k2| 1.0 + 0.5 * dt * nu * k2).collect();
        let pred: Vec<Complex64> = (0..wh.len()).map(|p| (a[p] * wh[p] + dt * (fh[p] + n0[p])) / b[p]).collect();
        let n1 = self.nonlinear(&pred);
        for p in 0..wh.len() {
            wh[p] = (a[p] * wh[p] + dt * (fh[p] + 0.5 * (n0[p] + n1[p]))) / b[p];
        }
    }
}

pub fn solve_navier_stokes(cfg: &PdeConfig, w0: &[f64]) -> Result<Trajectory> {
    let n = cfg.grid[0];
    if cfg.grid.len() != 2 || cfg.grid[1] != n {
        return Err(Error::invalid(format!("Navier-Stokes needs a square 2D grid, got {:?}", cfg.grid)));
    }
    if w0.len() != n * n {
        return Err(Error::shape(format!("initial vorticity has {} nodes, grid has {}", w0.len(), n * n)));
    }
    if cfg.viscosity <= 0.0 {
        return Err(Error::invalid("Navier-Stokes needs viscosity > 0"));
    }
    let solver = Vorticity::new(n);
    let fh = solver.fft.forward(&cfg.forcing.field(n));
    let mut wh = solver.fft.forward(w0);
    let dx = 1.0 / n as f64;
    let dt_snap = cfg.t_final / cfg.n_steps as f64;
    let mut data = w0.to_vec();
    for step in 0..cfg.n_steps {
        let (u, v) = solver.velocity(&wh);
        let vmax = u.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()));
        let sub = substeps(dt_snap, cfg.cfl_safety * dx / vmax.max(1e-12), cfg.max_substeps)?;
        let dt = dt_snap / sub as f64;
        for _ in 0..sub {
            solver.step(&mut wh, &fh, cfg.viscosity, dt);
        }
        let w = solver.fft.inverse(wh.clone());
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("vorticity non-finite at snapshot {}", step + 1)));
        }
        data.extend_from_slice(&w);
    }
    Ok(Trajectory {
        grid: Grid::periodic_unit(2, n),
        times: snapshot_times(cfg.t_final, cfg.n_steps),
        fields: Tensor::from_vec(&[cfg.n_steps + 1, n, n], data),
    })
}
