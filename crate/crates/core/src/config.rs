//! Experiment recipes: named presets plus TOML overrides.

use serde::{Deserialize, Serialize};

use crate::datagen::PdeConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::pod::PodPipelineConfig;
use crate::training::{OptimizerConfig, Strategy, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 6] = ["burgers-nu0.01", "ns-re20", "wave2d", "wave3d", "extrap-ns-lf-sweep", "noise-sweep"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPlan {
    pub pde: PdeConfig,
    pub count: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Training sees every `train_stride`-th stored snapshot; evaluation uses all.
    pub train_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePlan {
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrapolationPlan {
    pub lfs: Vec<usize>,
    pub horizon: usize,
    pub train_horizon: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPlan {
    #[serde(default)]
    pub superres: Vec<usize>,
    pub noise: Option<NoisePlan>,
    pub extrapolation: Option<ExtrapolationPlan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub schema_version: u32,
    pub preset: String,
    pub data: DataPlan,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalPlan,
    pub pod: Option<PodPipelineConfig>,
}

fn model_for(grid: Vec<usize>, bounds: [f64; 2], mults: Vec<usize>) -> ModelConfig {
    let d = grid.len();
    ModelConfig { grid_shape: grid, coord_bounds: vec![bounds; d], channel_mults: mults, ..ModelConfig::default() }
}

fn training(strategy: Strategy, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        strategy,
        loss: Default::default(),
        optimizer: OptimizerConfig { epochs, batch_size, ..OptimizerConfig::default() },
        max_val_samples: 512,
    }
}

const SUPERRES: [usize; 5] = [10, 20, 50, 100, 200];
const GAMMAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.5, 1.0];

/// Built-in recipe by name.
pub fn preset(name: &str) -> Result<Recipe> {
    let pi = std::f64::consts::PI;
    let split = [0.8, 0.1, 0.1];
    let (data, model, train, eval) = match name {
        "burgers-nu0.01" => (
            DataPlan { pde: PdeConfig::burgers(0.01, 1.0, 200, 128), count: 320, seed: 0, split, split_seed: 1, train_stride: 4 },
            model_for(vec![128], [0.0, 1.0], vec![1, 2, 2, 2]),
            training(Strategy::Subsample { alpha: 0.1 }, 300, 32),
            EvalPlan { superres: SUPERRES.to_vec(), ..EvalPlan::default() },
        ),
        "ns-re20" => (
            DataPlan { pde: PdeConfig::navier_stokes(1e-3, 50.0, 200, 64), count: 200, seed: 0, split, split_seed: 1, train_stride: 4 },
            model_for(vec![64, 64], [0.0, 1.0], vec![1, 2, 2, 2]),
            training(Strategy::Subsample { alpha: 0.1 }, 100, 16),
            EvalPlan { superres: SUPERRES.to_vec(), ..EvalPlan::default() },
        ),
        "wave2d" => (
            DataPlan { pde: PdeConfig::wave(2, 2.0, 200, 64), count: 200, seed: 0, split, split_seed: 1, train_stride: 4 },
            model_for(vec![64, 64], [0.0, pi], vec![1, 2, 2, 2]),
            training(Strategy::Subsample { alpha: 0.1 }, 100, 16),
            EvalPlan { superres: SUPERRES.to_vec(), ..EvalPlan::default() },
        ),
        "wave3d" => (
            DataPlan { pde: PdeConfig::wave(3, 2.0, 200, 32), count: 80, seed: 0, split, split_seed: 1, train_stride: 4 },
            model_for(vec![32, 32, 32], [0.0, pi], vec![1, 2, 2]),
            training(Strategy::Subsample { alpha: 0.1 }, 50, 4),
            EvalPlan { superres: SUPERRES.to_vec(), ..EvalPlan::default() },
        ),
        "extrap-ns-lf-sweep" => (
            DataPlan { pde: PdeConfig::navier_stokes(1e-3, 50.0, 200, 64), count: 200, seed: 0, split, split_seed: 1, train_stride: 1 },
            model_for(vec![64, 64], [0.0, 1.0], vec![1, 2, 2, 2]),
            training(Strategy::Bundled { lf: 20, nt: 100, condition_on_offset: true, alpha: 1.0 }, 100, 16),
            EvalPlan {
                extrapolation: Some(ExtrapolationPlan { lfs: vec![1, 5, 10, 20, 50, 100], horizon: 200, train_horizon: 100 }),
                ..EvalPlan::default()
            },
        ),
        "noise-sweep" => (
            DataPlan { pde: PdeConfig::burgers(0.01, 1.0, 200, 128), count: 320, seed: 0, split, split_seed: 1, train_stride: 4 },
            ModelConfig { variant: Variant::DittoPoint, ..model_for(vec![128], [0.0, 1.0], vec![1, 2, 2, 2]) },
            training(Strategy::Subsample { alpha: 0.1 }, 300, 32),
            EvalPlan { noise: Some(NoisePlan { gammas: GAMMAS.to_vec(), seeds: vec![0, 1, 2, 3, 4] }), ..EvalPlan::default() },
        ),
        other => return Err(Error::invalid(format!("unknown preset {other:?}; choose one of {}", PRESETS.join(", ")))),
    };
    Ok(Recipe { schema_version: CONFIG_SCHEMA_VERSION, preset: name.into(), data, model, training: train, eval, pod: None })
}

/// Overlay `over` onto `base`. Tables merge key by key, except tagged tables
/// (with a `kind` key), which replace the base wholesale so that fields of
/// the old variant do not leak into the new one.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) if !o.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse TOML overrides on top of a preset. The preset comes from `preset`,
/// else the file's `preset` key, else `burgers-nu0.01`. Unknown keys and type
/// mismatches are errors; range problems are collected by [`Recipe::validate`].
pub fn parse_recipe(text: &str, preset_name: Option<&str>) -> Result<Recipe> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
    if let Some(v) = table.get("schema_version") {
        let found = v.as_integer().unwrap_or(-1);
        if found != CONFIG_SCHEMA_VERSION as i64 {
            return Err(Error::Schema { found: found.max(0) as u32, expected: CONFIG_SCHEMA_VERSION });
        }
    }
    let name = match (preset_name, table.get("preset")) {
        (Some(n), _) => n.to_string(),
        (None, Some(v)) => v.as_str().ok_or_else(|| Error::invalid("config: preset must be a string"))?.to_string(),
        (None, None) => PRESETS[0].to_string(),
    };
    let base = preset(&name)?;
    let mut value = toml::Value::try_from(&base).map_err(|e| Error::invalid(format!("config: {e}")))?;
    let mut over = table;
    over.insert("preset".into(), toml::Value::String(name));
    merge(&mut value, toml::Value::Table(over));
    value.try_into().map_err(|e: toml::de::Error| Error::invalid(format!("config: {}", e.message())))
}

impl Recipe {
    /// Every range violation found, in a fixed order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                out.push(match e {
                    Error::InvalidArgument(m) => m,
                    other => other.to_string(),
                });
            }
        };
        check(self.data.pde.validate());
        if self.data.count == 0 {
            check(Err(Error::invalid("data.count must be >= 1")));
        }
        if self.data.split.iter().any(|r| !(*r >= 0.0)) || (self.data.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            check(Err(Error::invalid(format!("data.split must be nonnegative and sum to 1, got {:?}", self.data.split))));
        }
        if self.data.train_stride == 0 || self.data.pde.n_steps % self.data.train_stride != 0 {
            check(Err(Error::invalid(format!(
                "data.train_stride must divide n_steps={}, got {}",
                self.data.pde.n_steps, self.data.train_stride
            ))));
        }
        check(self.model.validate());
        if self.model.grid_shape != self.data.pde.grid {
            check(Err(Error::invalid(format!("model.grid_shape {:?} differs from data grid {:?}", self.model.grid_shape, self.data.pde.grid))));
        }
        match self.training.strategy {
            Strategy::Subsample { alpha } | Strategy::Bundled { alpha, .. } if !(alpha > 0.0 && alpha <= 1.0) => {
                check(Err(Error::invalid(format!(
                    "training.strategy.alpha={alpha} out of range: sub-sampling keeps a fraction 0 < alpha < 1 of the pairs (alpha = 1 is the full set)"
                ))));
            }
            _ => {}
        }
        if let Strategy::Bundled { lf, nt, .. } = self.training.strategy {
            let steps = self.data.pde.n_steps / self.data.train_stride.max(1);
            if lf == 0 || lf > nt {
                check(Err(Error::invalid(format!("training.strategy.lf={lf} out of range: need 1 <= lf <= nt={nt}"))));
            }
            if nt > steps {
                check(Err(Error::invalid(format!("training.strategy.nt={nt} exceeds the {steps} training steps"))));
            }
        }
        let mut train = self.training.clone();
        train.strategy = Strategy::Full;
        check(train.validate());
        let steps = self.data.pde.n_steps;
        if let Some(&bad) = self.eval.superres.iter().find(|&&n| n == 0 || steps % n != 0) {
            check(Err(Error::invalid(format!("eval.superres entry {bad} must divide n_steps={steps}"))));
        }
        if let Some(noise) = &self.eval.noise {
            if let Some(g) = noise.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
                check(Err(Error::invalid(format!("eval.noise.gammas entry {g} must be >= 0"))));
            }
            if noise.seeds.is_empty() {
                check(Err(Error::invalid("eval.noise.seeds must not be empty")));
            }
        }
        if let Some(ex) = &self.eval.extrapolation {
            if ex.horizon > steps || ex.train_horizon > ex.horizon {
                check(Err(Error::invalid(format!(
                    "eval.extrapolation needs train_horizon <= horizon <= n_steps={steps}, got {} and {}",
                    ex.train_horizon, ex.horizon
                ))));
            }
            if let Some(&lf) = ex.lfs.iter().find(|&&lf| lf == 0 || lf > ex.train_horizon) {
                check(Err(Error::invalid(format!("eval.extrapolation lf={lf} out of range: need 1 <= lf <= nt={}", ex.train_horizon))));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(p.join("; ")))
        }
    }

    /// Fully resolved TOML echo.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Replace every seed with `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.data.seed = seed;
        self.data.split_seed = seed;
        self.model.seed = seed;
        self.training.optimizer.seed = seed;
        if let Some(n) = &mut self.eval.noise {
            n.seeds = (0..n.seeds.len() as u64).map(|i| seed.wrapping_add(i)).collect();
        }
    }
}
