//! Losses, sampling strategies, learning-rate schedule and the training loop.

mod sampling;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetBundle, Pair, Split, Trajectory};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{clip_global_norm, Adam, Graph, ParamStore, Tensor};

pub use sampling::{make_bundled_pairs, subsample_epoch, BundlingConfig, Pool, Strategy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr0: 1e-3, beta1: 0.9, beta2: 0.999, weight_decay: 0.0, batch_size: 32, epochs: 100, grad_clip: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Cap on validation samples, taken at a fixed stride.
    #[serde(default = "default_val_samples")]
    pub max_val_samples: usize,
}

fn default_val_samples() -> usize {
    512
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if !(self.loss.epsilon > 0.0) {
            return Err(Error::invalid("loss epsilon must be > 0"));
        }
        let o = &self.optimizer;
        if !(o.lr0 > 0.0 && o.lr0.is_finite()) {
            return Err(Error::invalid(format!("lr0 must be > 0, got {}", o.lr0)));
        }
        if o.batch_size == 0 || o.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean over the batch of `||pred - target|| / (eps + ||target||)`, each
/// sample flattened.
pub fn relative_l2_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64> {
    if pred.shape() != target.shape() || pred.shape().is_empty() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let batch = pred.shape()[0];
    let per = pred.len() / batch.max(1);
    let mut total = 0.0;
    for (p, t) in pred.data().chunks(per).zip(target.data().chunks(per)) {
        let num: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = t.iter().map(|b| b * b).sum::<f64>().sqrt();
        total += num / (eps + den);
    }
    Ok(total / batch as f64)
}

/// `lr0 (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs total > 0"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total}")));
    }
    Ok(lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Stack inputs, targets and scalars of `samples` drawn from `trajs`.
pub fn batch_tensors(trajs: &[&Trajectory], samples: &[Pair]) -> (Tensor, Tensor, Vec<f64>) {
    let grid_shape = trajs[0].grid.shape();
    let mut shape = vec![samples.len()];
    shape.extend(grid_shape);
    let s = trajs[0].spatial_len();
    let mut x = Vec::with_capacity(samples.len() * s);
    let mut y = Vec::with_capacity(samples.len() * s);
    for p in samples {
        x.extend_from_slice(trajs[p.traj].snapshot(p.input));
        y.extend_from_slice(trajs[p.traj].snapshot(p.target));
    }
    let scalars = samples.iter().map(|p| p.scalar).collect();
    (Tensor::from_vec(&shape, x), Tensor::from_vec(&shape, y), scalars)
}

/// Mean rel-L2 loss of `model` over `samples`, evaluated in batches.
pub fn evaluate_loss(model: &Model, trajs: &[&Trajectory], samples: &[Pair], batch: usize, eps: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let (x, y, s) = batch_tensors(trajs, chunk);
        let pred = model.forward(&x, &s)?;
        total += relative_l2_loss(&pred, &y, eps)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// One optimizer step on `samples`; returns the batch loss.
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    trajs: &[&Trajectory],
    samples: &[Pair],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let (x, y, s) = batch_tensors(trajs, samples);
    let mut g = Graph::new();
    let pred = model.forward_graph(&mut g, &model.params, &x, &s)?;
    let target = g.input(y, false);
    let loss = g.rel_l2_loss(pred, target, cfg.loss.epsilon);
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss);
    let mut grads: Vec<_> = g.param_grads().into_iter().map(|(id, t)| (id, t.clone())).collect();
    drop(g);
    if cfg.optimizer.grad_clip > 0.0 {
        clip_global_norm(&mut grads, cfg.optimizer.grad_clip);
    }
    adam.step(&mut model.params, &grads, lr);
    model.params.round_to_f32();
    Ok(value)
}

/// Samples used for validation: every sample of the validation pool when it
/// fits under the cap, else an evenly strided subset.
fn validation_samples(pool: &Pool, cap: usize) -> Vec<Pair> {
    let all = pool.per_traj.concat();
    if all.len() <= cap {
        return all;
    }
    let stride = all.len().div_ceil(cap);
    all.into_iter().step_by(stride).collect()
}

/// Train `model` in place on the train split; validation uses the val split.
/// On return the model holds the best-validation parameters. A non-finite
/// loss restores those parameters and returns `Error::Numeric`.
pub fn train(
    model: &mut Model,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_trajs = bundle.select(Split::Train);
    let val_trajs = bundle.select(Split::Val);
    if train_trajs.is_empty() || val_trajs.is_empty() {
        return Err(Error::invalid("training needs nonempty train and val splits"));
    }
    let pool = Pool::build(&cfg.strategy, &train_trajs)?;
    let val_pool = Pool::build(&cfg.strategy.fit_horizon(val_trajs[0].n_steps()), &val_trajs)?;
    let val_samples = validation_samples(&val_pool, cfg.max_val_samples);
    let o = &cfg.optimizer;
    let epoch_len = pool.epoch(&cfg.strategy, o.seed, 0)?.len();
    let total_steps = o.epochs * epoch_len.div_ceil(o.batch_size);
    let mut adam = Adam::new(&model.params, o.beta1, o.beta2, o.weight_decay);
    let mut best: (f64, usize, ParamStore) = (f64::INFINITY, 0, model.params.clone());
    let mut history = Vec::with_capacity(o.epochs);
    let mut step = 0;
    for epoch in 0..o.epochs {
        let samples = pool.epoch(&cfg.strategy, o.seed, epoch)?;
        let mut sum = 0.0;
        let mut lr = 0.0;
        for chunk in samples.chunks(o.batch_size) {
            lr = cosine_lr(step, total_steps, o.lr0)?;
            let loss = train_step(model, &mut adam, &train_trajs, chunk, cfg, lr)?;
            if !loss.is_finite() {
                model.params = best.2;
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}, step {step}")));
            }
            sum += loss * chunk.len() as f64;
            step += 1;
        }
        let val_loss = evaluate_loss(model, &val_trajs, &val_samples, o.batch_size, cfg.loss.epsilon)?;
        let rec = EpochRecord { epoch, train_loss: sum / samples.len() as f64, val_loss, lr };
        on_epoch(&rec);
        if !val_loss.is_finite() {
            model.params = best.2;
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
        }
        history.push(rec);
    }
    model.params = best.2;
    Ok(TrainOutcome { history, best_epoch: best.1, best_val: best.0 })
}

/// `history.csv` content: `epoch,train_loss,val_loss,lr`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        s.push_str(&format!("{},{:e},{:e},{:e}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    s
}

#[cfg(test)]
mod tests;
