//! Building blocks of the conditioned U-Net.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_fan_in, Activation, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};

/// Allocates named, seeded parameters.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    dims: usize,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64, dims: usize) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed), dims }
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom, zero: bool) -> Conv {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(geom.kernel, self.dims));
        let fan_in = cin * geom.kernel.pow(self.dims as u32);
        let w = if zero { Tensor::zeros(&shape) } else { uniform_fan_in(&mut self.rng, &shape, fan_in) };
        let b = if zero { Tensor::zeros(&[cout]) } else { uniform_fan_in(&mut self.rng, &[cout], fan_in) };
        Conv { w: self.store.add(format!("{name}.weight"), w), b: self.store.add(format!("{name}.bias"), b), geom }
    }

    pub fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Linear {
        let w = uniform_fan_in(&mut self.rng, &[fout, fin], fin);
        let b = uniform_fan_in(&mut self.rng, &[fout], fin);
        Linear { w: self.store.add(format!("{name}.weight"), w), b: self.store.add(format!("{name}.bias"), b) }
    }

    pub fn norm(&mut self, name: &str, channels: usize, max_groups: usize) -> Norm {
        let groups = (1..=max_groups.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1);
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        g.conv(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let (w, b) = (g.param(s, self.w), g.param(s, self.b));
        g.linear(x, w, b)
    }

    pub fn out_features(&self, s: &ParamStore) -> usize {
        s.get(self.w).dim(0)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl Norm {
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Var {
        let (gm, bt) = (g.param(s, self.gamma), g.param(s, self.beta));
        g.group_norm(x, gm, bt, self.groups)
    }
}

/// How conditioning coefficients act on features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningForm {
    /// `h * (1 + s)`; identity at `s = 0`.
    #[default]
    OnePlus,
    /// `h * s`.
    Product,
}

impl ConditioningForm {
    fn shift(self) -> f64 {
        match self {
            ConditioningForm::OnePlus => 1.0,
            ConditioningForm::Product => 0.0,
        }
    }
}

/// Two-layer MLP on the sinusoidal code: affine, GELU, affine.
#[derive(Clone, Debug)]
pub struct ConditioningHead {
    pub l1: Linear,
    pub l2: Linear,
}

impl ConditioningHead {
    pub(crate) fn build(b: &mut Builder, d_emb: usize, hidden: usize) -> Self {
        Self { l1: b.linear("cond.l1", d_emb, hidden), l2: b.linear("cond.l2", hidden, hidden) }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, e: Var) -> Var {
        let h = self.l1.forward(g, s, e);
        let h = g.act(h, Activation::Gelu);
        self.l2.forward(g, s, h)
    }
}

/// Residual block: two conv, normalize, activate stages with optional
/// channel-wise conditioning between them.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub norm1: Option<Norm>,
    pub conv2: Conv,
    pub norm2: Option<Norm>,
    pub skip: Option<Conv>,
    /// Projects the conditioning features to one coefficient per channel.
    pub cond: Option<Linear>,
    pub act: Activation,
    pub form: ConditioningForm,
}

pub(crate) struct ResBlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub cond_width: Option<usize>,
    pub groups: usize,
    pub normalize: bool,
    pub act: Activation,
    pub form: ConditioningForm,
    /// Zero the second convolution so the block starts as its skip path.
    pub zero_last: bool,
}

impl ResBlock {
    pub(crate) fn build(b: &mut Builder, name: &str, spec: ResBlockSpec) -> Self {
        let conv1 = b.conv(&format!("{name}.conv1"), spec.cin, spec.cout, ConvGeom::same(3), false);
        let norm1 = spec.normalize.then(|| b.norm(&format!("{name}.norm1"), spec.cout, spec.groups));
        let cond = spec.cond_width.map(|w| b.linear(&format!("{name}.cond"), w, spec.cout));
        let conv2 = b.conv(&format!("{name}.conv2"), spec.cout, spec.cout, ConvGeom::same(3), spec.zero_last);
        let norm2 = spec.normalize.then(|| b.norm(&format!("{name}.norm2"), spec.cout, spec.groups));
        let skip = (spec.cin != spec.cout).then(|| b.conv(&format!("{name}.skip"), spec.cin, spec.cout, ConvGeom::same(1), false));
        Self { conv1, norm1, conv2, norm2, skip, cond, act: spec.act, form: spec.form }
    }

    pub fn out_channels(&self, s: &ParamStore) -> usize {
        s.get(self.conv2.w).dim(0)
    }

    /// Forward with conditioning features `f` (`(batch, width)`), projected by
    /// this block's own affine map.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, f: Option<Var>) -> Var {
        let coeffs = match (&self.cond, f) {
            (Some(lin), Some(f)) => Some(lin.forward(g, s, f)),
            _ => None,
        };
        self.forward_with_coeffs(g, s, x, coeffs).expect("projected coefficients always match")
    }

    /// Forward with explicit per-channel coefficients `(batch, channels)`.
    pub fn forward_with_coeffs(&self, g: &mut Graph, s: &ParamStore, x: Var, coeffs: Option<Var>) -> Result<Var> {
        let h = self.stage(g, s, x, &self.conv1, self.norm1.as_ref());
        let h = match coeffs {
            Some(c) => {
                let want = [g.shape(x)[0], self.out_channels(s)];
                if g.shape(c) != want {
                    return Err(Error::shape(format!(
                        "conditioning coefficients {:?} do not match block channels {want:?}",
                        g.shape(c)
                    )));
                }
                g.channel_scale(h, c, self.form.shift())
            }
            None => h,
        };
        let h = self.stage(g, s, h, &self.conv2, self.norm2.as_ref());
        let skip = match &self.skip {
            Some(c) => c.forward(g, s, x),
            None => x,
        };
        Ok(g.add(h, skip))
    }

    fn stage(&self, g: &mut Graph, s: &ParamStore, x: Var, conv: &Conv, norm: Option<&Norm>) -> Var {
        let h = conv.forward(g, s, x);
        let h = match norm {
            Some(n) => n.forward(g, s, h),
            None => h,
        };
        g.act(h, self.act)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Tokens are positions, each of channel width.
    Spatial,
    /// Tokens are channels, each of spatial width.
    Channel,
}

/// Scaled dot-product attention on `(batch, channels, spatial...)` projections.
/// Returns `(batch, channels, positions)`.
pub fn attend(g: &mut Graph, q: Var, k: Var, v: Var, mode: AttentionMode, softmax: bool) -> Result<Var> {
    let shape = g.shape(q).to_vec();
    let (ch, positions) = (shape[1], shape[2..].iter().product::<usize>());
    if ch == 0 || positions == 0 {
        return Err(Error::invalid("attention over zero tokens"));
    }
    let out = match mode {
        AttentionMode::Spatial => {
            let scores = g.bmm(q, k, true, false);
            let scores = g.mul_scalar(scores, 1.0 / (ch as f64).sqrt());
            let weights = if softmax { g.softmax(scores) } else { scores };
            g.bmm(v, weights, false, true)
        }
        AttentionMode::Channel => {
            let scores = g.bmm(q, k, false, true);
            let scores = g.mul_scalar(scores, 1.0 / (positions as f64).sqrt());
            let weights = if softmax { g.softmax(scores) } else { scores };
            let v3 = g.reshape(v, &[shape[0], ch, positions]);
            g.bmm(weights, v3, false, false)
        }
    };
    Ok(out)
}

/// Normalized attention with 1x1 query/key/value/output projections and a
/// residual connection. The output projection starts at zero.
#[derive(Clone, Debug)]
pub struct Attention {
    pub norm: Norm,
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub proj: Conv,
    pub mode: AttentionMode,
    pub softmax: bool,
}

impl Attention {
    pub(crate) fn build(b: &mut Builder, name: &str, ch: usize, groups: usize, mode: AttentionMode, softmax: bool) -> Self {
        let pw = ConvGeom::same(1);
        Self {
            norm: b.norm(&format!("{name}.norm"), ch, groups),
            q: b.conv(&format!("{name}.q"), ch, ch, pw, false),
            k: b.conv(&format!("{name}.k"), ch, ch, pw, false),
            v: b.conv(&format!("{name}.v"), ch, ch, pw, false),
            proj: b.conv(&format!("{name}.proj"), ch, ch, pw, true),
            mode,
            softmax,
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, h: Var) -> Result<Var> {
        let hn = self.norm.forward(g, s, h);
        let q = self.q.forward(g, s, hn);
        let k = self.k.forward(g, s, hn);
        let v = self.v.forward(g, s, hn);
        let a = attend(g, q, k, v, self.mode, self.softmax)?;
        let shape = g.shape(h).to_vec();
        let a = g.reshape(a, &shape);
        let p = self.proj.forward(g, s, a);
        Ok(g.add(h, p))
    }
}
