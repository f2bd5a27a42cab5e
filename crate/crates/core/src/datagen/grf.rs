//! Gaussian random fields with covariance `sigma (-Laplacian + tau^2)^(-alpha)`
//! on the periodic unit domain, sampled mode by mode.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::{wavenumber, Fft1, Fft2};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub dimension: usize,
    pub sigma: f64,
    pub tau: f64,
    pub alpha_exp: f64,
    pub grid_points: usize,
}

impl GrfSpec {
    /// Initial conditions of the Burgers datasets: `625 (-Lap + 25)^-2`.
    pub fn burgers(grid_points: usize) -> Self {
        Self { dimension: 1, sigma: 625.0, tau: 5.0, alpha_exp: 2.0, grid_points }
    }

    /// Initial vorticity of the Navier-Stokes datasets: `7^1.5 (-Lap + 49)^-2.5`.
    pub fn navier_stokes(grid_points: usize) -> Self {
        Self { dimension: 2, sigma: 7f64.powf(1.5), tau: 7.0, alpha_exp: 2.5, grid_points }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(Error::invalid(format!("GRF dimension must be 1 or 2, got {}", self.dimension)));
        }
        if !(self.sigma > 0.0 && self.tau > 0.0) {
            return Err(Error::invalid("GRF sigma and tau must be > 0"));
        }
        if self.alpha_exp <= self.dimension as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "alpha_exp {} gives divergent variance in dimension {}",
                self.alpha_exp, self.dimension
            )));
        }
        if self.grid_points < 4 || self.grid_points % 2 != 0 {
            return Err(Error::invalid(format!("grid_points must be even and >= 4, got {}", self.grid_points)));
        }
        Ok(())
    }

    /// `E |u_hat_k|^2` with `u_hat = DFT(u) / n^d`, for integer wave vector `k`.
    pub fn mode_variance(&self, k: &[i64]) -> f64 {
        let k2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
        let lap = 4.0 * std::f64::consts::PI.powi(2) * k2;
        self.sigma * (lap + self.tau * self.tau).powf(-self.alpha_exp)
    }

    /// Retained modes exclude the mean and the Nyquist bins.
    fn retained(&self, k: &[i64]) -> bool {
        let half = (self.grid_points / 2) as i64;
        k.iter().any(|&v| v != 0) && k.iter().all(|&v| v.abs() != half)
    }
}

fn complex_normal(rng: &mut impl Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draw one field, row-major on `grid_points^dimension` nodes at `j / n`.
pub fn sample_grf(spec: &GrfSpec, rng: &mut impl Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.grid_points;
    let zero = Complex64::new(0.0, 0.0);
    match spec.dimension {
        1 => {
            let mut c = vec![zero; n];
            for i in 1..n / 2 {
                let v = complex_normal(rng, spec.mode_variance(&[i as i64])) * n as f64;
                c[i] = v;
                c[n - i] = v.conj();
            }
            Ok(Fft1::new(n).inverse(c))
        }
        _ => {
            let mut c = vec![zero; n * n];
            let scale = (n * n) as f64;
            for i in 0..n {
                for j in 0..n {
                    let k = [wavenumber(i, n), wavenumber(j, n)];
                    // one representative per conjugate pair
                    if !spec.retained(&k) || (k[0], k[1]) < (0, 0) || (k[0] == 0 && k[1] < 0) {
                        continue;
                    }
                    let v = complex_normal(rng, spec.mode_variance(&k)) * scale;
                    c[i * n + j] = v;
                    c[((n - i) % n) * n + (n - j) % n] = v.conj();
                }
            }
            Ok(Fft2::new(n).inverse(c))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn burgers_first_mode_variance() {
        let s = GrfSpec::burgers(128);
        let want = 625.0 / (4.0 * std::f64::consts::PI.powi(2) + 25.0).powi(2);
        assert!((s.mode_variance(&[1]) - want).abs() < 1e-15);
        assert!((want - 0.1503).abs() < 1e-4);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = GrfSpec::burgers(127);
        assert!(s.validate().is_err());
        s.grid_points = 128;
        s.alpha_exp = 0.5;
        assert!(s.validate().is_err());
        let mut t = GrfSpec::navier_stokes(64);
        t.alpha_exp = 1.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn same_seed_same_field_and_real_zero_mean() {
        for spec in [GrfSpec::burgers(32), GrfSpec::navier_stokes(16)] {
            let a = sample_grf(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let b = sample_grf(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(a, b);
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_is_hermitian_with_dropped_nyquist() {
        let spec = GrfSpec::navier_stokes(8);
        let u = sample_grf(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = Fft2::new(8).forward(&u);
        for i in 0..8 {
            assert!(c[i * 8 + 4].norm() < 1e-12 && c[4 * 8 + i].norm() < 1e-12);
        }
    }
}
