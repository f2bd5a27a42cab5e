//! Central finite-difference gradient checking.
//!
//! The objective is `<out, seed>` for a fixed seed tensor, so any vector-valued
//! graph can be checked through one reverse pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;

/// Denominator floor. Tensors whose true gradient vanishes (a bias followed by
/// a per-channel norm, a key bias under softmax) leave only difference
/// roundoff, around 1e-10 for `h = 1e-5`.
pub const ABS_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, ABS_FLOOR)`.
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Compare reverse-mode gradients of every parameter in `store` against
/// central differences with step `h`. At most `max_entries` entries per
/// tensor are probed (chosen deterministically).
pub fn check_params<F>(store: &ParamStore, build: F, h: f64, max_entries: usize) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let out = build(&mut g, store);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let seed = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    g.backward_with(out, seed.clone());
    let analytic: Vec<Option<Tensor>> = store
        .ids()
        .map(|id| g.param_grads().into_iter().find(|(p, _)| *p == id).map(|(_, t)| t.clone()))
        .collect();

    let objective = |s: &ParamStore| {
        let mut g = Graph::new();
        let out = build(&mut g, s);
        g.value(out).data().iter().zip(seed.data()).map(|(a, b)| a * b).sum::<f64>()
    };

    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_param: String::new(), entries_checked: 0 };
    for id in store.ids() {
        let len = store.get(id).len();
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        let zero = Tensor::zeros(store.get(id).shape());
        let a = analytic[id.index()].as_ref().unwrap_or(&zero);
        let (mut diff2, mut an2, mut nu2) = (0.0, 0.0, 0.0);
        for j in (0..len).step_by(stride) {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + h;
            let fp = objective(&work);
            work.get_mut(id).data_mut()[j] = orig - h;
            let fm = objective(&work);
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let av = a.data()[j];
            diff2 += (av - numeric) * (av - numeric);
            an2 += av * av;
            nu2 += numeric * numeric;
            report.entries_checked += 1;
        }
        let scale = an2.sqrt().max(nu2.sqrt());
        let rel = diff2.sqrt() / scale.max(ABS_FLOOR);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = store.name(id).to_string();
        }
    }
    report
}
