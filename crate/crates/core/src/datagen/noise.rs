use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub gamma: f64,
    pub sigma_d: f64,
    pub seed: u64,
}

/// Standard deviation over every element of every snapshot of `trajs`.
pub fn dataset_std(trajs: &[&Trajectory]) -> f64 {
    let (mut n, mut sum, mut sum2) = (0usize, 0.0, 0.0);
    for t in trajs {
        for &v in t.fields.data() {
            n += 1;
            sum += v;
            sum2 += v * v;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    (sum2 / n as f64 - mean * mean).max(0.0).sqrt()
}

/// `x + gamma * N(0, sigma_d^2)` elementwise. `gamma = 0` returns the input
/// unchanged bit for bit.
pub fn inject_noise(values: &[f64], cfg: &NoiseConfig) -> Result<Vec<f64>> {
    if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {}", cfg.gamma)));
    }
    if !(cfg.sigma_d >= 0.0 && cfg.sigma_d.is_finite()) {
        return Err(Error::invalid(format!("dataset std must be >= 0, got {}", cfg.sigma_d)));
    }
    if cfg.gamma == 0.0 {
        return Ok(values.to_vec());
    }
    let normal = Normal::new(0.0, cfg.gamma * cfg.sigma_d).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(values.iter().map(|&v| v + normal.sample(&mut rng)).collect())
}
