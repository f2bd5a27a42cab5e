//! Supervised sample pools and per-epoch selection.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{assemble_pairs, Pair, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundlingConfig {
    /// Look-forward window in steps.
    pub lf: usize,
    /// Training horizon in steps; later snapshots are never seen.
    pub nt: usize,
    /// Condition on the offset from the input state rather than absolute time.
    #[serde(default = "yes")]
    pub condition_on_offset: bool,
}

fn yes() -> bool {
    true
}

impl BundlingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lf == 0 || self.lf > self.nt {
            return Err(Error::invalid(format!("look-forward window must satisfy 1 <= lf <= nt, got lf={} nt={}", self.lf, self.nt)));
        }
        Ok(())
    }

    /// `nt - lf + 1`.
    pub fn sub_trajectories(&self) -> usize {
        self.nt - self.lf + 1
    }
}

/// Bundled samples of one trajectory: each start `s in 0..=nt-lf` maps `x_s`
/// to `x_{s+1}, ..., x_{s+lf}`. Grouped by start, offsets ascending.
pub fn make_bundled_pairs(traj: &Trajectory, traj_index: usize, cfg: &BundlingConfig) -> Result<Vec<Pair>> {
    cfg.validate()?;
    if cfg.nt > traj.n_steps() {
        return Err(Error::invalid(format!("horizon nt={} exceeds the {} stored steps", cfg.nt, traj.n_steps())));
    }
    let mut out = Vec::with_capacity(cfg.sub_trajectories() * cfg.lf);
    for s in 0..=cfg.nt - cfg.lf {
        for j in 1..=cfg.lf {
            let t = traj.times[s + j];
            let scalar = if cfg.condition_on_offset { t - traj.times[s] } else { t };
            out.push(Pair { traj: traj_index, input: s, target: s + j, scalar });
        }
    }
    Ok(out)
}

/// Index subsets `S_m` of `{1, ..., t}` for `m` trajectories with
/// `sum |S_m| = round(alpha m t)`, sizes within one of each other, sorted.
pub fn subsample_epoch(m: usize, t: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let total = (alpha * (m * t) as f64).round() as usize;
    if total < 1 {
        return Err(Error::invalid(format!("alpha={alpha} selects no samples out of {}", m * t)));
    }
    let (base, extra) = (total / m, total % m);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut sizes = vec![base; m];
    for &i in &order[..extra] {
        sizes[i] += 1;
    }
    Ok(sizes
        .into_iter()
        .map(|k| {
            let mut s: Vec<usize> = sample(rng, t, k).into_iter().map(|i| i + 1).collect();
            s.sort_unstable();
            s
        })
        .collect())
}

/// How the per-epoch sample list is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Every `(x_0, t_n) -> x_n` pair each epoch.
    Full,
    /// A fresh fraction `alpha` of the pairs each epoch.
    Subsample { alpha: f64 },
    /// Bundled pairs, optionally subsampled by `alpha` per epoch.
    Bundled {
        lf: usize,
        nt: usize,
        #[serde(default = "yes")]
        condition_on_offset: bool,
        #[serde(default = "one")]
        alpha: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Strategy {
    pub fn bundling(&self) -> Option<BundlingConfig> {
        match *self {
            Strategy::Bundled { lf, nt, condition_on_offset, .. } => Some(BundlingConfig { lf, nt, condition_on_offset }),
            _ => None,
        }
    }

    /// The same strategy shortened to trajectories of `n_steps`.
    pub fn fit_horizon(&self, n_steps: usize) -> Strategy {
        match *self {
            Strategy::Bundled { lf, nt, condition_on_offset, alpha } => {
                let nt = nt.min(n_steps);
                Strategy::Bundled { lf: lf.min(nt), nt, condition_on_offset, alpha }
            }
            s => s,
        }
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Strategy::Full => 1.0,
            Strategy::Subsample { alpha } | Strategy::Bundled { alpha, .. } => alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Full => Ok(()),
            Strategy::Subsample { alpha } => check_alpha(*alpha),
            Strategy::Bundled { alpha, .. } => {
                self.bundling().expect("bundled").validate()?;
                check_alpha(*alpha)
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must satisfy 0 < alpha <= 1, got {alpha}")))
    }
}

/// Per-trajectory candidate samples, in canonical order.
pub struct Pool {
    pub per_traj: Vec<Vec<Pair>>,
}

impl Pool {
    pub fn build(strategy: &Strategy, trajs: &[&Trajectory]) -> Result<Self> {
        let per_traj = match strategy {
            Strategy::Full | Strategy::Subsample { .. } => {
                let pairs = assemble_pairs(trajs)?;
                let t = trajs.first().map_or(0, |t| t.n_steps());
                pairs.chunks(t.max(1)).map(<[Pair]>::to_vec).collect()
            }
            Strategy::Bundled { .. } => {
                let bundling = strategy.bundling().expect("bundled");
                trajs.iter().enumerate().map(|(m, t)| make_bundled_pairs(t, m, &bundling)).collect::<Result<_>>()?
            }
        };
        Ok(Self { per_traj })
    }

    pub fn len(&self) -> usize {
        self.per_traj.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples for one epoch, shuffled. Selection and shuffling draw from
    /// separate streams so that `alpha = 1` reproduces the full ordering.
    pub fn epoch(&self, strategy: &Strategy, seed: u64, epoch: usize) -> Result<Vec<Pair>> {
        let mut select_rng = ChaCha8Rng::seed_from_u64(seed);
        select_rng.set_stream(2 * epoch as u64 + 1);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
        shuffle_rng.set_stream(2 * epoch as u64);
        let alpha = strategy.alpha();
        let mut out = if alpha >= 1.0 {
            self.per_traj.concat()
        } else {
            let per = self.per_traj.first().map_or(0, Vec::len);
            if self.per_traj.iter().any(|p| p.len() != per) {
                return Err(Error::invalid("subsampling needs equal pool sizes per trajectory"));
            }
            let subsets = subsample_epoch(self.per_traj.len(), per, alpha, &mut select_rng)?;
            subsets
                .iter()
                .zip(&self.per_traj)
                .flat_map(|(s, pool)| s.iter().map(move |&i| pool[i - 1]))
                .collect()
        };
        out.shuffle(&mut shuffle_rng);
        Ok(out)
    }
}
