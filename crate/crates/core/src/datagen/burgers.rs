//! Viscous Burgers on the periodic unit interval: pseudospectral in space,
//! integrating-factor RK4 in time.

use rustfft::num_complex::Complex64;

use super::spectral::{dealiased, wavenumber, Fft1};
use super::{snapshot_times, substeps, PdeConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::Tensor;

struct Burgers {
    fft: Fft1,
    /// `-i k / 2` on kept modes, zero elsewhere.
    flux: Vec<Complex64>,
    mask: Vec<bool>,
    nu_k2: Vec<f64>,
}

impl Burgers {
    fn new(n: usize, nu: f64) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mask: Vec<bool> = (0..n).map(|i| dealiased(i, n)).collect();
        let flux = (0..n)
            .map(|i| if mask[i] { Complex64::new(0.0, -0.5 * two_pi * wavenumber(i, n) as f64) } else { Complex64::new(0.0, 0.0) })
            .collect();
        let nu_k2 = (0..n).map(|i| nu * (two_pi * wavenumber(i, n) as f64).powi(2)).collect();
        Self { fft: Fft1::new(n), flux, mask, nu_k2 }
    }

    /// `-(u^2 / 2)_x` in spectral space, dealiased on input and output.
    fn nonlinear(&self, uh: &[Complex64]) -> Vec<Complex64> {
        let trunc: Vec<Complex64> = uh.iter().zip(&self.mask).map(|(v, &m)| if m { *v } else { Complex64::new(0.0, 0.0) }).collect();
        let u = self.fft.inverse(trunc);
        let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
        let mut out = self.fft.forward(&sq);
        for (o, f) in out.iter_mut().zip(&self.flux) {
            *o *= f;
        }
        out
    }

    fn step(&self, uh: &mut [Complex64], dt: f64) {
        let e: Vec<f64> = self.nu_k2.iter().map(|a| (-a * dt / 2.0).exp()).collect();
        let n = uh.len();
        let a = self.nonlinear(uh);
        let tmp: Vec<Complex64> = (0..n).map(|i| e[i] * (uh[i] + 0.5 * dt * a[i])).collect();
        let b = self.nonlinear(&tmp);
        let tmp: Vec<Complex64> = (0..n).map(|i| e[i] * uh[i] + 0.5 * dt * b[i]).collect();
        let c = self.nonlinear(&tmp);
        let tmp: Vec<Complex64> = (0..n).map(|i| e[i] * e[i] * uh[i] + dt * e[i] * c[i]).collect();
        let d = self.nonlinear(&tmp);
        for i in 0..n {
            let e2 = e[i] * e[i];
            uh[i] = e2 * uh[i] + dt / 6.0 * (e2 * a[i] + 2.0 * e[i] * (b[i] + c[i]) + d[i]);
        }
    }
}

pub fn solve_burgers(cfg: &PdeConfig, u0: &[f64]) -> Result<Trajectory> {
    let n = cfg.grid[0];
    if u0.len() != n {
        return Err(Error::shape(format!("initial field has {} nodes, grid has {n}", u0.len())));
    }
    if cfg.viscosity <= 0.0 {
        return Err(Error::invalid("Burgers needs viscosity > 0"));
    }
    let solver = Burgers::new(n, cfg.viscosity);
    let dx = 1.0 / n as f64;
    let dt_snap = cfg.t_final / cfg.n_steps as f64;
    let mut uh = solver.fft.forward(u0);
    let mut u = u0.to_vec();
    let mut data = u0.to_vec();
    for step in 0..cfg.n_steps {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sub = substeps(dt_snap, cfg.cfl_safety * dx / umax.max(1e-12), cfg.max_substeps)?;
        let dt = dt_snap / sub as f64;
        for _ in 0..sub {
            solver.step(&mut uh, dt);
        }
        u = solver.fft.inverse(uh.clone());
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("Burgers field non-finite at snapshot {}", step + 1)));
        }
        data.extend_from_slice(&u);
    }
    Ok(Trajectory {
        grid: Grid::periodic_unit(1, n),
        times: snapshot_times(cfg.t_final, cfg.n_steps),
        fields: Tensor::from_vec(&[cfg.n_steps + 1, n], data),
    })
}
