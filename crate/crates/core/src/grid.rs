//! Tensor-product spatial grids.

use serde::{Deserialize, Serialize};

/// Coordinates along each spatial axis; the grid is their tensor product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    /// `n` nodes per axis at `j/n` on the periodic unit interval.
    pub fn periodic_unit(dim: usize, n: usize) -> Self {
        let axis: Vec<f64> = (0..n).map(|j| j as f64 / n as f64).collect();
        Self { axes: vec![axis; dim] }
    }

    /// `n` nodes per axis including both endpoints of `[lo, hi]`.
    pub fn closed(dim: usize, n: usize, lo: f64, hi: f64) -> Self {
        let axis: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Self { axes: vec![axis; dim] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major list of node coordinates, `len() x dim()`.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(self.len());
        for flat in 0..self.len() {
            let mut rem = flat;
            let mut p = vec![0.0; self.dim()];
            for a in (0..self.dim()).rev() {
                p[a] = self.axes[a][rem % shape[a]];
                rem /= shape[a];
            }
            out.push(p);
        }
        out
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        self.axes.iter().map(|a| [a[0], *a.last().unwrap()]).collect()
    }
}
