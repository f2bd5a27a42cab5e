use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{assemble_pairs, snapshot_times, PdeConfig};
use crate::grid::Grid;
use crate::model::{EmbeddingSpec, ModelConfig};

/// Travelling sine waves with per-trajectory amplitude and phase.
fn toy_trajectory(n: usize, steps: usize, t_final: f64, m: usize) -> Trajectory {
    let grid = Grid::closed(1, n, 0.0, 1.0);
    let times = snapshot_times(t_final, steps);
    let amp = 0.5 + 0.1 * m as f64;
    let phase = 0.7 * m as f64;
    let mut data = Vec::new();
    for &t in &times {
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            data.push((amp * (std::f64::consts::TAU * (x - 0.3 * t) + phase).sin()) as f32 as f64);
        }
    }
    Trajectory { grid, times, fields: Tensor::from_vec(&[steps + 1, n], data) }
}

fn toy_bundle(count: usize, steps: usize, val: usize) -> DatasetBundle {
    let trajectories: Vec<_> = (0..count).map(|m| toy_trajectory(16, steps, 1.0, m)).collect();
    let splits = (0..count).map(|m| if m < count - val { Split::Train } else { Split::Val }).collect();
    DatasetBundle { config: PdeConfig::burgers(0.01, 1.0, steps, 16), trajectories, splits, seeds: (0..count as u64).collect() }
}

fn toy_model() -> Model {
    Model::new(ModelConfig {
        grid_shape: vec![16],
        base_channels: 4,
        channel_mults: vec![1, 2],
        embedding: EmbeddingSpec { d_emb: 8, mlp_hidden: 16 },
        time_scale: 10.0,
        norm_groups: 2,
        seed: 5,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn toy_train_config(strategy: Strategy, epochs: usize) -> TrainConfig {
    TrainConfig {
        strategy,
        loss: LossConfig::default(),
        optimizer: OptimizerConfig { lr0: 3e-3, batch_size: 8, epochs, seed: 11, ..OptimizerConfig::default() },
        max_val_samples: 64,
    }
}

#[test]
fn relative_loss_values() {
    let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]);
    let z = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
    let v = relative_l2_loss(&p, &z, 1e-8).unwrap();
    assert!((v - 1e8).abs() < 1e-4);

    let a = Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 1.0, 0.0]);
    let b = Tensor::from_vec(&[2, 2], vec![0.0, 4.0, 2.0, 0.0]);
    // sample 0: 3 / 4, sample 1: 1 / 2
    let v = relative_l2_loss(&a, &b, 0.0).unwrap();
    assert!((v - 0.625).abs() < 1e-15);
    assert!(relative_l2_loss(&a, &p, 1e-8).is_err());
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 10, 1e-3).unwrap(), 1e-3);
    assert!((cosine_lr(5, 10, 1e-3).unwrap() - 5e-4).abs() < 1e-18);
    assert!(cosine_lr(10, 10, 1e-3).unwrap().abs() < 1e-18);
    let a = cosine_lr(2, 10, 1.0).unwrap();
    assert!((a - (1.0 + (0.2 * std::f64::consts::PI).cos()) / 2.0).abs() < 1e-15);
    assert!(cosine_lr(0, 0, 1e-3).is_err());
    assert!(cosine_lr(11, 10, 1e-3).is_err());
}

#[test]
fn bundled_pair_counts() {
    let traj = toy_trajectory(4, 200, 2.0, 0);
    for (lf, subs) in [(1, 100), (20, 81), (100, 1)] {
        let cfg = BundlingConfig { lf, nt: 100, condition_on_offset: true };
        assert_eq!(cfg.sub_trajectories(), subs);
        let pairs = make_bundled_pairs(&traj, 0, &cfg).unwrap();
        assert_eq!(pairs.len(), subs * lf);
        assert!(pairs.iter().all(|p| p.target <= 100 && p.target > p.input));
    }
    assert!(BundlingConfig { lf: 0, nt: 100, condition_on_offset: true }.validate().is_err());
    assert!(BundlingConfig { lf: 101, nt: 100, condition_on_offset: true }.validate().is_err());
    assert!(make_bundled_pairs(&traj, 0, &BundlingConfig { lf: 5, nt: 201, condition_on_offset: true }).is_err());
}

#[test]
fn bundling_extremes_match_one_step_and_full_pairs() {
    let traj = toy_trajectory(4, 30, 1.0, 1);
    let key = |p: &Pair| (p.input, p.target, p.scalar.to_bits());

    let one = make_bundled_pairs(&traj, 0, &BundlingConfig { lf: 1, nt: 30, condition_on_offset: true }).unwrap();
    let got: BTreeSet<_> = one.iter().map(|p| (p.input, p.target)).collect();
    let want: BTreeSet<_> = (0..30).map(|s| (s, s + 1)).collect();
    assert_eq!(got, want);

    let full = make_bundled_pairs(&traj, 0, &BundlingConfig { lf: 30, nt: 30, condition_on_offset: true }).unwrap();
    let got: BTreeSet<_> = full.iter().map(key).collect();
    let want: BTreeSet<_> = assemble_pairs(&[&traj]).unwrap().iter().map(key).collect();
    assert_eq!(got, want);

    let abs = make_bundled_pairs(&traj, 0, &BundlingConfig { lf: 3, nt: 30, condition_on_offset: false }).unwrap();
    assert!(abs.iter().all(|p| p.scalar == traj.times[p.target]));
}

#[test]
fn subsample_totals_and_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (alpha, total) in [(0.05, 250), (0.1, 500), (0.2, 1000), (1.0, 5000)] {
        let sets = subsample_epoch(100, 50, alpha, &mut rng).unwrap();
        assert_eq!(sets.iter().map(Vec::len).sum::<usize>(), total);
        let lo = sets.iter().map(Vec::len).min().unwrap();
        let hi = sets.iter().map(Vec::len).max().unwrap();
        assert!(hi - lo <= 1);
        for s in &sets {
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| (1..=50).contains(&i)));
        }
    }
    // fewer samples than trajectories
    let sets = subsample_epoch(10, 3, 0.1, &mut rng).unwrap();
    assert_eq!(sets.iter().map(Vec::len).sum::<usize>(), 3);
    assert!(subsample_epoch(10, 5, 0.0, &mut rng).is_err());
    assert!(subsample_epoch(10, 5, 1.5, &mut rng).is_err());
    assert!(subsample_epoch(10, 5, 0.001, &mut rng).is_err());
}

#[test]
fn subsampling_covers_every_pair_over_many_epochs() {
    let trajs: Vec<_> = (0..10).map(|m| toy_trajectory(4, 50, 1.0, m)).collect();
    let refs: Vec<_> = trajs.iter().collect();
    let strategy = Strategy::Subsample { alpha: 0.1 };
    let pool = Pool::build(&strategy, &refs).unwrap();
    let mut seen = BTreeSet::new();
    for e in 0..200 {
        let ep = pool.epoch(&strategy, 3, e).unwrap();
        assert_eq!(ep.len(), 50);
        seen.extend(ep.iter().map(|p| (p.traj, p.target)));
    }
    assert_eq!(seen.len(), 500);
}

#[test]
fn inclusion_frequency_is_alpha() {
    // Uniform inclusion makes the subsampled epoch loss an unbiased estimate
    // of the full-data loss.
    let trajs: Vec<_> = (0..4).map(|m| toy_trajectory(4, 10, 1.0, m)).collect();
    let refs: Vec<_> = trajs.iter().collect();
    let strategy = Strategy::Subsample { alpha: 0.3 };
    let pool = Pool::build(&strategy, &refs).unwrap();
    let loss = |p: &Pair| (p.traj * 10 + p.target) as f64;
    let full_mean = pool.per_traj.concat().iter().map(loss).sum::<f64>() / 40.0;
    let epochs = 4000;
    let mut hits: HashMap<(usize, usize), usize> = HashMap::new();
    let mut est = 0.0;
    for e in 0..epochs {
        let ep = pool.epoch(&strategy, 9, e).unwrap();
        assert_eq!(ep.len(), 12);
        est += ep.iter().map(loss).sum::<f64>() / ep.len() as f64;
        for p in &ep {
            *hits.entry((p.traj, p.target)).or_default() += 1;
        }
    }
    assert_eq!(hits.len(), 40);
    for (&k, &h) in &hits {
        let f = h as f64 / epochs as f64;
        assert!((f - 0.3).abs() < 0.04, "pair {k:?} drawn with frequency {f}");
    }
    let est = est / epochs as f64;
    assert!((est - full_mean).abs() / full_mean < 0.01, "{est} vs {full_mean}");
}

#[test]
fn alpha_one_reproduces_full_epochs() {
    let trajs: Vec<_> = (0..3).map(|m| toy_trajectory(4, 7, 1.0, m)).collect();
    let refs: Vec<_> = trajs.iter().collect();
    let full = Pool::build(&Strategy::Full, &refs).unwrap();
    let sub = Pool::build(&Strategy::Subsample { alpha: 1.0 }, &refs).unwrap();
    for e in 0..5 {
        assert_eq!(full.epoch(&Strategy::Full, 4, e).unwrap(), sub.epoch(&Strategy::Subsample { alpha: 1.0 }, 4, e).unwrap());
    }
    assert_ne!(full.epoch(&Strategy::Full, 4, 0).unwrap(), full.epoch(&Strategy::Full, 4, 1).unwrap());
}

#[test]
fn strategy_serde_forms() {
    let s: Strategy = serde_json::from_str(r#"{"kind":"bundled","lf":10,"nt":100}"#).unwrap();
    assert_eq!(s, Strategy::Bundled { lf: 10, nt: 100, condition_on_offset: true, alpha: 1.0 });
    let s: Strategy = serde_json::from_str(r#"{"kind":"subsample","alpha":0.1}"#).unwrap();
    assert_eq!(s.alpha(), 0.1);
    assert!(serde_json::from_str::<Strategy>(r#"{"kind":"bundled","lf":1,"nt":2,"lfx":3}"#).is_err());
    assert!(Strategy::Subsample { alpha: 1.5 }.validate().is_err());
    assert!(Strategy::Bundled { lf: 0, nt: 10, condition_on_offset: true, alpha: 1.0 }.validate().is_err());
}

#[test]
fn training_is_reproducible_and_keeps_best_validation() {
    let bundle = toy_bundle(6, 8, 2);
    let cfg = toy_train_config(Strategy::Subsample { alpha: 0.5 }, 6);
    let mut a = toy_model();
    let mut seen = Vec::new();
    let out = train(&mut a, &bundle, &cfg, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, out.history);
    assert_eq!(out.history.len(), 6);
    assert!(out.history.iter().all(|r| out.best_val <= r.val_loss));
    assert_eq!(out.history[out.best_epoch].val_loss, out.best_val);
    assert!(out.history.windows(2).all(|w| w[1].lr < w[0].lr));

    let mut b = toy_model();
    let out_b = train(&mut b, &bundle, &cfg, |_| {}).unwrap();
    assert_eq!(out.history, out_b.history);
    assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x.1.data() == y.1.data()));

    // the returned model is the best-validation one
    let val = bundle.select(Split::Val);
    let pool = Pool::build(&cfg.strategy, &val).unwrap();
    let v = evaluate_loss(&a, &val, &pool.per_traj.concat(), 8, 1e-8).unwrap();
    assert!((v - out.best_val).abs() < 1e-12);
    assert!(a.params.iter().all(|(_, t)| t.data().iter().all(|&x| x == x as f32 as f64)));

    let csv = history_csv(&out.history);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n"));
}

#[test]
fn full_and_alpha_one_train_identically() {
    let bundle = toy_bundle(4, 6, 1);
    let mut a = toy_model();
    let mut b = toy_model();
    let ha = train(&mut a, &bundle, &toy_train_config(Strategy::Full, 2), |_| {}).unwrap().history;
    let hb = train(&mut b, &bundle, &toy_train_config(Strategy::Subsample { alpha: 1.0 }, 2), |_| {}).unwrap().history;
    assert_eq!(ha, hb);
}

#[test]
fn training_lowers_the_loss_and_keeps_time_sensitivity() {
    let bundle = toy_bundle(6, 8, 1);
    let mut m = toy_model();
    let out = train(&mut m, &bundle, &toy_train_config(Strategy::Full, 25), |_| {}).unwrap();
    assert!(out.history.last().unwrap().train_loss < 0.7 * out.history[0].train_loss);

    let x0 = Tensor::from_vec(&[1, 16], bundle.trajectories[0].snapshot(0).to_vec());
    let at = |t: f64| m.forward(&x0, &[t]).unwrap();
    let d_far = at(0.2).data().iter().zip(at(0.8).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let d_near = at(0.5).data().iter().zip(at(0.5 + 1e-7).data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d_far > 1e-3);
    assert!(d_near < 1e-4 * d_far.max(1e-3) + 1e-9);
}

#[test]
fn training_rejects_bad_inputs() {
    let mut bundle = toy_bundle(3, 4, 1);
    let mut m = toy_model();
    bundle.splits = vec![Split::Train; 3];
    assert!(train(&mut m, &bundle, &toy_train_config(Strategy::Full, 1), |_| {}).is_err());
    let bundle = toy_bundle(3, 4, 1);
    let mut cfg = toy_train_config(Strategy::Full, 1);
    cfg.optimizer.batch_size = 0;
    assert!(train(&mut m, &bundle, &cfg, |_| {}).is_err());
    let cfg = toy_train_config(Strategy::Bundled { lf: 2, nt: 9, condition_on_offset: true, alpha: 1.0 }, 1);
    assert!(train(&mut m, &bundle, &cfg, |_| {}).is_err());
}

#[test]
fn non_finite_loss_restores_parameters() {
    let mut bundle = toy_bundle(3, 4, 1);
    // an infinite target makes the training loss non-finite on the first step
    let s = bundle.trajectories[0].spatial_len();
    bundle.trajectories[0].fields.data_mut()[s] = f64::INFINITY;
    let mut m = toy_model();
    let before = m.params.clone();
    let err = train(&mut m, &bundle, &toy_train_config(Strategy::Full, 2), |_| {}).unwrap_err();
    assert!(err.is_numeric());
    assert!(m.params.iter().zip(before.iter()).all(|(x, y)| x.1.data() == y.1.data()));
}
