use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Supervised sample by reference: input snapshot, target snapshot and the
/// conditioning scalar, all within trajectory `traj`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub traj: usize,
    pub input: usize,
    pub target: usize,
    pub scalar: f64,
}

/// `(x_0^m, t_n) -> x_n^m` for `n = 1..=T` and every trajectory `m`.
pub fn assemble_pairs(trajs: &[&Trajectory]) -> Result<Vec<Pair>> {
    let Some(first) = trajs.first() else {
        return Ok(Vec::new());
    };
    if trajs.iter().any(|t| t.times != first.times) {
        return Err(Error::invalid("trajectories have inconsistent time grids"));
    }
    let mut out = Vec::with_capacity(trajs.len() * first.n_steps());
    for m in 0..trajs.len() {
        for n in 1..=first.n_steps() {
            out.push(Pair { traj: m, input: 0, target: n, scalar: first.times[n] });
        }
    }
    Ok(out)
}
