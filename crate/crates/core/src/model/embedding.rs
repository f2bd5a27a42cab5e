//! Sinusoidal encodings of scalars and spatial coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    /// Width of the sinusoidal code; must be even.
    pub d_emb: usize,
    /// Width of the two-layer conditioning MLP.
    pub mlp_hidden: usize,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self { d_emb: 32, mlp_hidden: 64 }
    }
}

impl EmbeddingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_emb < 2 || self.d_emb % 2 != 0 {
            return Err(Error::invalid(format!("d_emb must be even and >= 2, got {}", self.d_emb)));
        }
        if self.mlp_hidden < 2 {
            return Err(Error::invalid(format!("mlp_hidden must be >= 2, got {}", self.mlp_hidden)));
        }
        Ok(())
    }
}

/// Interleaved sin/cos code: slot `2i` holds `sin(t / 10000^(2i/d))`, slot
/// `2i+1` the matching cosine.
pub fn embed_scalar(t: f64, d_emb: usize) -> Result<Vec<f64>> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("conditioning scalar must be finite and >= 0, got {t}")));
    }
    Ok(sinusoid(t, d_emb))
}

/// Same code without the sign restriction; coordinates may be negative.
pub(crate) fn sinusoid(t: f64, d_emb: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_emb];
    for i in 0..d_emb / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / d_emb as f64);
        out[2 * i] = (t * freq).sin();
        out[2 * i + 1] = (t * freq).cos();
    }
    out
}

/// Positional code of a point: per-axis sinusoids of the scaled, normalized
/// coordinate, summed across axes. Axis `j` is shifted by `j * axis_offset`
/// so that permuting coordinates changes the code.
pub fn positional_code(normalized: &[f64], d_emb: usize, coord_scale: f64, axis_offset: f64) -> Vec<f64> {
    let mut code = vec![0.0; d_emb];
    for (j, &u) in normalized.iter().enumerate() {
        let e = sinusoid(coord_scale * u + j as f64 * axis_offset, d_emb);
        for (c, v) in code.iter_mut().zip(e) {
            *c += v;
        }
    }
    code
}
