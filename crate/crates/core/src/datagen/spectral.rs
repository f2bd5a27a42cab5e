//! FFT helpers for periodic unit domains.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Signed integer wavenumber of FFT bin `i` on `n` points.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Whether bin `i` survives 2/3-rule truncation.
pub fn dealiased(i: usize, n: usize) -> bool {
    3 * wavenumber(i, n).unsigned_abs() < n as u64
}

/// Unnormalized forward and normalized inverse 1D transforms.
pub struct Fft1 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft1 {
    pub fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self { n, fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Real part of the inverse transform, divided by `n`.
    pub fn inverse(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut c);
        let s = 1.0 / self.n as f64;
        c.iter().map(|v| v.re * s).collect()
    }
}

/// Row-major `n x n` transforms built from 1D passes along each axis.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self { n, fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }

    fn pass(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let n = self.n;
        plan.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_complex(&mut buf);
        buf
    }

    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        let plan = self.fwd.clone();
        self.pass(&plan, buf);
    }

    pub fn inverse(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        let plan = self.inv.clone();
        self.pass(&plan, &mut c);
        let s = 1.0 / (self.n * self.n) as f64;
        c.iter().map(|v| v.re * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumbers_and_truncation() {
        let ks: Vec<i64> = (0..8).map(|i| wavenumber(i, 8)).collect();
        assert_eq!(ks, [0, 1, 2, 3, 4, -3, -2, -1]);
        let kept: Vec<usize> = (0..8).filter(|&i| dealiased(i, 8)).collect();
        assert_eq!(kept, [0, 1, 2, 6, 7]);
    }

    #[test]
    fn fft2_round_trip_and_single_mode() {
        let n = 8;
        let u: Vec<f64> = (0..n * n)
            .map(|p| {
                let (i, j) = (p / n, p % n);
                (2.0 * std::f64::consts::PI * (i as f64 + 2.0 * j as f64) / n as f64).cos()
            })
            .collect();
        let f = Fft2::new(n);
        let c = f.forward(&u);
        // cos(2 pi (x + 2y)) has mass n^2/2 at (1, 2) and (-1, -2)
        assert!((c[n + 2].re - 32.0).abs() < 1e-9);
        assert!((c[(n - 1) * n + n - 2].re - 32.0).abs() < 1e-9);
        let back = f.inverse(c);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
