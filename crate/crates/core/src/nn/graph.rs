//! Reverse-mode automatic differentiation over a recorded tape of tensor ops.
//!
//! Feature maps are laid out `(batch, channels, spatial...)` with one to three
//! spatial axes. A [`Graph`] lives for one forward/backward pass; parameters are
//! copied in from a [`ParamStore`] on first use and their gradients read back
//! after [`Graph::backward`].

use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Gelu,
    Identity,
}

/// Convolution geometry shared by every active spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub const fn same(kernel: usize) -> Self {
        Self { kernel, stride: 1, pad: kernel / 2 }
    }

    pub const fn down(kernel: usize) -> Self {
        Self { kernel, stride: 2, pad: kernel / 2 }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<f64>, rstd: Vec<f64> },
    Act { x: Var, kind: Activation },
    ChannelScale { h: Var, s: Var, shift: f64 },
    Concat { a: Var, b: Var },
    Upsample { x: Var },
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Softmax { x: Var },
    MulScalar { x: Var, c: f64 },
    Reshape { x: Var },
    ResizeLast { x: Var },
    GatherLast { x: Var, index: Vec<usize> },
    RelL2 { pred: Var, target: Var, eps: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
    grads: Vec<Option<Tensor>>,
}

/// Spatial extent padded to three axes `(d, h, w)`, leading axes set to 1.
fn spatial3(shape: &[usize]) -> [usize; 3] {
    let s = &shape[2..];
    match s.len() {
        1 => [1, 1, s[0]],
        2 => [1, s[0], s[1]],
        3 => [s[0], s[1], s[2]],
        n => panic!("unsupported spatial rank {n}"),
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * 0.044_715 * x * x);
    (y, dy)
}

fn silu(x: f64) -> (f64, f64) {
    let sg = 1.0 / (1.0 + (-x).exp());
    (x * sg, sg * (1.0 + x * (1.0 - sg)))
}

fn activate(kind: Activation, x: f64) -> (f64, f64) {
    match kind {
        Activation::Silu => silu(x),
        Activation::Gelu => gelu(x),
        Activation::Identity => (x, 1.0),
    }
}

struct ConvDims {
    cin: usize,
    inp: [usize; 3],
    out: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

impl ConvDims {
    fn new(x_shape: &[usize], geom: ConvGeom) -> Self {
        let rank = x_shape.len() - 2;
        let inp = spatial3(x_shape);
        let mut k = [1; 3];
        let mut s = [1; 3];
        let mut p = [0; 3];
        for axis in 3 - rank..3 {
            k[axis] = geom.kernel;
            s[axis] = geom.stride;
            p[axis] = geom.pad;
        }
        let out = [0, 1, 2].map(|a| (inp[a] + 2 * p[a] - k[a]) / s[a] + 1);
        Self { cin: x_shape[1], inp, out, k, s, p }
    }

    fn rows(&self) -> usize {
        self.cin * self.k.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn in_len(&self) -> usize {
        self.inp.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.s == [1, 1, 1]
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let [id, ih, iw] = self.inp;
        let [od, oh, ow] = self.out;
        let olen = self.out_len();
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..self.k[0] {
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let dst = &mut cols[row * olen..(row + 1) * olen];
                        let mut o = 0;
                        for oz in 0..od {
                            let iz = (oz * self.s[0] + kz) as isize - self.p[0] as isize;
                            for oy in 0..oh {
                                let iy = (oy * self.s[1] + ky) as isize - self.p[1] as isize;
                                let valid_zy = iz >= 0 && iz < id as isize && iy >= 0 && iy < ih as isize;
                                let base = if valid_zy { (iz as usize * ih + iy as usize) * iw } else { 0 };
                                for ox in 0..ow {
                                    let ix = (ox * self.s[2] + kx) as isize - self.p[2] as isize;
                                    dst[o] = if valid_zy && ix >= 0 && ix < iw as isize {
                                        xc[base + ix as usize]
                                    } else {
                                        0.0
                                    };
                                    o += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let [id, ih, iw] = self.inp;
        let [od, oh, ow] = self.out;
        let olen = self.out_len();
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &mut dx[ci * id * ih * iw..(ci + 1) * id * ih * iw];
            for kz in 0..self.k[0] {
                for ky in 0..self.k[1] {
                    for kx in 0..self.k[2] {
                        let src = &cols[row * olen..(row + 1) * olen];
                        let mut o = 0;
                        for oz in 0..od {
                            let iz = (oz * self.s[0] + kz) as isize - self.p[0] as isize;
                            for oy in 0..oh {
                                let iy = (oy * self.s[1] + ky) as isize - self.p[1] as isize;
                                if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                                    o += ow;
                                    continue;
                                }
                                let base = (iz as usize * ih + iy as usize) * iw;
                                for ox in 0..ow {
                                    let ix = (ox * self.s[2] + kx) as isize - self.p[2] as isize;
                                    if ix >= 0 && ix < iw as isize {
                                        xc[base + ix as usize] += src[o];
                                    }
                                    o += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant or differentiable input.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// The graph node holding parameter `id`; created on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        if let Some(v) = self.params[id.index()] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params[id.index()] = Some(v);
        v
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let xs = self.shape(x).to_vec();
        let dims = ConvDims::new(&xs, geom);
        let ws = self.shape(w);
        let cout = ws[0];
        assert_eq!(ws[1], dims.cin, "conv: weight expects {} input channels, got {}", ws[1], dims.cin);
        let rows = dims.rows();
        assert_eq!(self.value(w).len(), cout * rows, "conv: kernel shape mismatch");
        let (olen, ilen) = (dims.out_len(), dims.in_len());
        let batch = xs[0];
        let mut out_shape = vec![batch, cout];
        let rank = xs.len() - 2;
        out_shape.extend_from_slice(&dims.out[3 - rank..]);
        let mut out = Tensor::zeros(&out_shape);
        let mut cols = if dims.is_pointwise() { Vec::new() } else { vec![0.0; rows * olen] };
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            let od = out.data_mut();
            for bi in 0..batch {
                let xb = &xv[bi * dims.cin * ilen..(bi + 1) * dims.cin * ilen];
                let ob = &mut od[bi * cout * olen..(bi + 1) * cout * olen];
                for (co, chunk) in ob.chunks_mut(olen).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bv[co]);
                }
                let src = if dims.is_pointwise() {
                    xb
                } else {
                    dims.im2col(xb, &mut cols);
                    &cols
                };
                gemm(false, false, cout, olen, rows, 1.0, wv, src, 1.0, ob);
            }
        }
        let ng = self.needs(&[x, w, b]);
        self.push(out, Op::Conv { x, w, b, geom }, ng)
    }

    /// `x: (batch, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x);
        let (batch, fin) = (xs[0], xs[1]);
        let ws = self.shape(w);
        let fout = ws[0];
        assert_eq!(ws[1], fin, "linear: weight expects {} inputs, got {fin}", ws[1]);
        let mut out = Tensor::zeros(&[batch, fout]);
        {
            let bv = self.value(b).data();
            for row in out.data_mut().chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(false, true, batch, fout, fin, 1.0, self.value(x).data(), self.value(w).data(), 1.0, out.data_mut());
        let ng = self.needs(&[x, w, b]);
        self.push(out, Op::Linear { x, w, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(&[a, b]);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        const EPS: f64 = 1e-5;
        let xs = self.shape(x).to_vec();
        let (batch, ch) = (xs[0], xs[1]);
        assert!(ch % groups == 0, "group_norm: {ch} channels not divisible by {groups} groups");
        let s = self.value(x).spatial_len();
        let cpg = ch / groups;
        let n = (cpg * s) as f64;
        let mut out = Tensor::zeros(&xs);
        let mut mean = vec![0.0; batch * groups];
        let mut rstd = vec![0.0; batch * groups];
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            let od = out.data_mut();
            for bi in 0..batch {
                for g in 0..groups {
                    let start = (bi * ch + g * cpg) * s;
                    let seg = &xv[start..start + cpg * s];
                    let mu = seg.iter().sum::<f64>() / n;
                    let var = seg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let r = 1.0 / (var + EPS).sqrt();
                    mean[bi * groups + g] = mu;
                    rstd[bi * groups + g] = r;
                    for c in 0..cpg {
                        let cc = g * cpg + c;
                        let off = start + c * s;
                        for i in 0..s {
                            od[off + i] = (xv[off + i] - mu) * r * gv[cc] + bv[cc];
                        }
                    }
                }
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        self.push(out, Op::GroupNorm { x, gamma, beta, groups, mean, rstd }, ng)
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| activate(kind, v).0);
        let ng = self.needs(&[x]);
        self.push(out, Op::Act { x, kind }, ng)
    }

    /// `h * (shift + s)` with `h: (batch, channels, ...)` and `s: (batch, channels)`.
    pub fn channel_scale(&mut self, h: Var, s: Var, shift: f64) -> Var {
        let hs = self.shape(h).to_vec();
        let ss = self.shape(s);
        assert_eq!(ss, &hs[..2], "channel_scale: coefficient shape {ss:?} does not match {hs:?}");
        let sp = self.value(h).spatial_len();
        let mut out = self.value(h).clone();
        {
            let sv = self.value(s).data();
            for (i, chunk) in out.data_mut().chunks_mut(sp).enumerate() {
                let f = shift + sv[i];
                chunk.iter_mut().for_each(|v| *v *= f);
            }
        }
        let ng = self.needs(&[h, s]);
        self.push(out, Op::ChannelScale { h, s, shift }, ng)
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[2..], sb[2..], "concat: spatial mismatch");
        let sp: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let mut data = Vec::with_capacity(sa[0] * (ca + cb) * sp);
        for bi in 0..sa[0] {
            data.extend_from_slice(&self.value(a).data()[bi * ca * sp..(bi + 1) * ca * sp]);
            data.extend_from_slice(&self.value(b).data()[bi * cb * sp..(bi + 1) * cb * sp]);
        }
        let ng = self.needs(&[a, b]);
        self.push(Tensor::from_vec(&shape, data), Op::Concat { a, b }, ng)
    }

    /// Nearest-neighbour upsampling by 2 along every spatial axis.
    pub fn upsample(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let rank = xs.len() - 2;
        let [d, h, w] = spatial3(&xs);
        let f = |n: usize, axis: usize| if axis >= 3 - rank { 2 * n } else { n };
        let (od, oh, ow) = (f(d, 0), f(h, 1), f(w, 2));
        let mut shape = xs.clone();
        for s in shape[2..].iter_mut() {
            *s *= 2;
        }
        let planes = xs[0] * xs[1];
        let mut out = Tensor::zeros(&shape);
        {
            let xv = self.value(x).data();
            let o = out.data_mut();
            for p in 0..planes {
                let src = &xv[p * d * h * w..];
                let dst = &mut o[p * od * oh * ow..(p + 1) * od * oh * ow];
                for z in 0..od {
                    let sz = z * d / od;
                    for y in 0..oh {
                        let sy = y * h / oh;
                        for xx in 0..ow {
                            dst[(z * oh + y) * ow + xx] = src[(sz * h + sy) * w + xx * w / ow];
                        }
                    }
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::Upsample { x }, ng)
    }

    /// Batched matrix product. Each operand is viewed as `(batch, rows, cols)`
    /// where `cols` folds all trailing axes.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (bt, ar, ac) = view3(self.shape(a));
        let (bt2, br, bc) = view3(self.shape(b));
        assert_eq!(bt, bt2, "bmm: batch mismatch");
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "bmm: inner dimension mismatch");
        let mut out = Tensor::zeros(&[bt, m, n]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let o = out.data_mut();
            for i in 0..bt {
                gemm(
                    ta,
                    tb,
                    m,
                    n,
                    k,
                    1.0,
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    0.0,
                    &mut o[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(out, Op::Bmm { a, b, ta, tb }, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let last = *self.shape(x).last().expect("softmax of a scalar");
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(last) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::Softmax { x }, ng)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.needs(&[x]);
        self.push(out, Op::MulScalar { x, c }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        let ng = self.needs(&[x]);
        self.push(out, Op::Reshape { x }, ng)
    }

    /// Zero-pad or crop the last axis to `len`.
    pub fn resize_last(&mut self, x: Var, len: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let old = *xs.last().unwrap();
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(&shape);
        let keep = old.min(len);
        for (src, dst) in self.value(x).data().chunks(old).zip(out.data_mut().chunks_mut(len)) {
            dst[..keep].copy_from_slice(&src[..keep]);
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::ResizeLast { x }, ng)
    }

    /// `out[..., i] = x[..., index[i]]` along the last axis.
    pub fn gather_last(&mut self, x: Var, index: &[usize]) -> Var {
        let xs = self.shape(x).to_vec();
        let old = *xs.last().unwrap();
        assert!(index.iter().all(|&i| i < old), "gather_last: index out of range");
        let mut shape = xs;
        *shape.last_mut().unwrap() = index.len();
        let mut out = Tensor::zeros(&shape);
        for (src, dst) in self.value(x).data().chunks(old).zip(out.data_mut().chunks_mut(index.len())) {
            for (d, &i) in dst.iter_mut().zip(index) {
                *d = src[i];
            }
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::GatherLast { x, index: index.to_vec() }, ng)
    }

    /// Mean over the batch of `||pred - target|| / (eps + ||target||)`, each
    /// sample flattened.
    pub fn rel_l2_loss(&mut self, pred: Var, target: Var, eps: f64) -> Var {
        assert_eq!(self.shape(pred), self.shape(target), "rel_l2_loss: shape mismatch");
        let batch = self.shape(pred)[0];
        let per = self.value(pred).len() / batch;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let mut total = 0.0;
        for bi in 0..batch {
            let r = bi * per..(bi + 1) * per;
            let (num, den) = diff_and_norm(&p[r.clone()], &t[r]);
            total += num / (eps + den);
        }
        let ng = self.needs(&[pred, target]);
        self.push(Tensor::scalar(total / batch as f64), Op::RelL2 { pred, target, eps }, ng)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter that took part in the pass.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|p| *p)
            .filter_map(|v| match self.nodes[v.0].op {
                Op::Param(id) => self.grad(v).map(|g| (id, g)),
                _ => None,
            })
            .collect()
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).len(), 1, "backward: output is not a scalar");
        let seed = Tensor::full(self.shape(out), 1.0);
        self.backward_with(out, seed);
    }

    /// Backpropagate the vector-Jacobian product with `seed` from `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) {
        assert_eq!(seed.shape(), self.shape(out), "backward: seed shape mismatch");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            self.backward_node(i, &gy);
            self.grads[i] = Some(gy);
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&mut self, i: usize, gy: &Tensor) {
        let gyd = gy.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            &Op::Conv { x, w, b, geom } => {
                let xs = self.shape(x).to_vec();
                let dims = ConvDims::new(&xs, geom);
                let cout = self.shape(w)[0];
                let (rows, olen, ilen) = (dims.rows(), dims.out_len(), dims.in_len());
                let batch = xs[0];
                let mut dw = Tensor::zeros(self.shape(w));
                let mut db = Tensor::zeros(&[cout]);
                let mut dx = Tensor::zeros(&xs);
                let want_x = self.wants(x);
                let pointwise = dims.is_pointwise();
                let mut cols = if pointwise { Vec::new() } else { vec![0.0; rows * olen] };
                let mut dcols = if pointwise { Vec::new() } else { vec![0.0; rows * olen] };
                {
                    let xv = self.value(x).data();
                    let wv = self.value(w).data();
                    for bi in 0..batch {
                        let gb = &gyd[bi * cout * olen..(bi + 1) * cout * olen];
                        for (co, chunk) in gb.chunks(olen).enumerate() {
                            db.data_mut()[co] += chunk.iter().sum::<f64>();
                        }
                        let xb = &xv[bi * dims.cin * ilen..(bi + 1) * dims.cin * ilen];
                        let src = if pointwise {
                            xb
                        } else {
                            dims.im2col(xb, &mut cols);
                            &cols
                        };
                        gemm(false, true, cout, rows, olen, 1.0, gb, src, 1.0, dw.data_mut());
                        if want_x {
                            let dxb = &mut dx.data_mut()[bi * dims.cin * ilen..(bi + 1) * dims.cin * ilen];
                            if pointwise {
                                gemm(true, false, rows, olen, cout, 1.0, wv, gb, 1.0, dxb);
                            } else {
                                gemm(true, false, rows, olen, cout, 1.0, wv, gb, 0.0, &mut dcols);
                                dims.col2im(&dcols, dxb);
                            }
                        }
                    }
                }
                self.accumulate(w, dw);
                self.accumulate(b, db);
                if want_x {
                    self.accumulate(x, dx);
                }
            }
            &Op::Linear { x, w, b } => {
                let (batch, fin) = (self.shape(x)[0], self.shape(x)[1]);
                let fout = self.shape(w)[0];
                let mut dx = Tensor::zeros(&[batch, fin]);
                let mut dw = Tensor::zeros(&[fout, fin]);
                let mut db = Tensor::zeros(&[fout]);
                for row in gyd.chunks(fout) {
                    for (d, g) in db.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                gemm(true, false, fout, fin, batch, 1.0, gyd, self.value(x).data(), 0.0, dw.data_mut());
                if self.wants(x) {
                    gemm(false, false, batch, fin, fout, 1.0, gyd, self.value(w).data(), 0.0, dx.data_mut());
                    self.accumulate(x, dx);
                }
                self.accumulate(w, dw);
                self.accumulate(b, db);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, gy.clone());
                self.accumulate(b, gy.clone());
            }
            Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                let xs = self.shape(x).to_vec();
                let (batch, ch) = (xs[0], xs[1]);
                let s = self.value(x).spatial_len();
                let cpg = ch / groups;
                let n = (cpg * s) as f64;
                let mut dx = Tensor::zeros(&xs);
                let mut dgamma = Tensor::zeros(&[ch]);
                let mut dbeta = Tensor::zeros(&[ch]);
                {
                    let xv = self.value(x).data();
                    let gv = self.value(gamma).data();
                    let dxd = dx.data_mut();
                    for bi in 0..batch {
                        for g in 0..groups {
                            let mu = mean[bi * groups + g];
                            let r = rstd[bi * groups + g];
                            let start = (bi * ch + g * cpg) * s;
                            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                            for c in 0..cpg {
                                let cc = g * cpg + c;
                                let off = start + c * s;
                                for k in 0..s {
                                    let xhat = (xv[off + k] - mu) * r;
                                    let d = gyd[off + k];
                                    dgamma.data_mut()[cc] += d * xhat;
                                    dbeta.data_mut()[cc] += d;
                                    let dh = d * gv[cc];
                                    sum_d += dh;
                                    sum_dx += dh * xhat;
                                }
                            }
                            for c in 0..cpg {
                                let cc = g * cpg + c;
                                let off = start + c * s;
                                for k in 0..s {
                                    let xhat = (xv[off + k] - mu) * r;
                                    let dh = gyd[off + k] * gv[cc];
                                    dxd[off + k] = r / n * (n * dh - sum_d - xhat * sum_dx);
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
            }
            &Op::Act { x, kind } => {
                let mut dx = self.value(x).clone();
                for (v, g) in dx.data_mut().iter_mut().zip(gyd) {
                    *v = activate(kind, *v).1 * g;
                }
                self.accumulate(x, dx);
            }
            &Op::ChannelScale { h, s, shift } => {
                let sp = self.value(h).spatial_len();
                let sv = self.value(s).data().to_vec();
                let hv = self.value(h).data();
                let mut ds = Tensor::zeros(self.shape(s));
                let mut dh = gy.clone();
                for (idx, (gchunk, hchunk)) in gyd.chunks(sp).zip(hv.chunks(sp)).enumerate() {
                    ds.data_mut()[idx] = gchunk.iter().zip(hchunk).map(|(a, b)| a * b).sum();
                }
                for (idx, chunk) in dh.data_mut().chunks_mut(sp).enumerate() {
                    let f = shift + sv[idx];
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
                self.accumulate(h, dh);
                self.accumulate(s, ds);
            }
            &Op::Concat { a, b } => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let sp: usize = sa[2..].iter().product();
                let (ca, cb) = (sa[1], sb[1]);
                let mut da = Vec::with_capacity(sa.iter().product());
                let mut db = Vec::with_capacity(sb.iter().product());
                for bi in 0..sa[0] {
                    let base = bi * (ca + cb) * sp;
                    da.extend_from_slice(&gyd[base..base + ca * sp]);
                    db.extend_from_slice(&gyd[base + ca * sp..base + (ca + cb) * sp]);
                }
                self.accumulate(a, Tensor::from_vec(&sa, da));
                self.accumulate(b, Tensor::from_vec(&sb, db));
            }
            &Op::Upsample { x } => {
                let xs = self.shape(x).to_vec();
                let rank = xs.len() - 2;
                let [d, h, w] = spatial3(&xs);
                let f = |n: usize, axis: usize| if axis >= 3 - rank { 2 * n } else { n };
                let (od, oh, ow) = (f(d, 0), f(h, 1), f(w, 2));
                let mut dx = Tensor::zeros(&xs);
                let planes = xs[0] * xs[1];
                let dxd = dx.data_mut();
                for p in 0..planes {
                    let src = &gyd[p * od * oh * ow..(p + 1) * od * oh * ow];
                    let dst = &mut dxd[p * d * h * w..(p + 1) * d * h * w];
                    for z in 0..od {
                        let sz = z * d / od;
                        for y in 0..oh {
                            let sy = y * h / oh;
                            for xx in 0..ow {
                                dst[(sz * h + sy) * w + xx * w / ow] += src[(z * oh + y) * ow + xx];
                            }
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::Bmm { a, b, ta, tb } => {
                let (bt, ar, ac) = view3(self.shape(a));
                let (_, br, bc) = view3(self.shape(b));
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = if tb { br } else { bc };
                let mut da = Tensor::zeros(self.shape(a));
                let mut db = Tensor::zeros(self.shape(b));
                {
                    let (av, bv) = (self.value(a).data(), self.value(b).data());
                    for i in 0..bt {
                        let g = &gyd[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let dai = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
                        if ta {
                            gemm(tb, true, k, m, n, 1.0, bi, g, 0.0, dai);
                        } else {
                            gemm(false, !tb, m, k, n, 1.0, g, bi, 0.0, dai);
                        }
                        let dbi = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(true, ta, n, k, m, 1.0, g, ai, 0.0, dbi);
                        } else {
                            gemm(!ta, false, k, n, m, 1.0, ai, g, 0.0, dbi);
                        }
                    }
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Softmax { x } => {
                let y = &self.nodes[i].value;
                let last = *y.shape().last().unwrap();
                let mut dx = Tensor::zeros(y.shape());
                for ((yr, gr), dr) in y.data().chunks(last).zip(gyd.chunks(last)).zip(dx.data_mut().chunks_mut(last)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..last {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::MulScalar { x, c } => {
                let dx = gy.map(|v| v * c);
                self.accumulate(x, dx);
            }
            &Op::Reshape { x } => {
                let dx = gy.clone().reshape(self.shape(x));
                self.accumulate(x, dx);
            }
            &Op::ResizeLast { x } => {
                let xs = self.shape(x).to_vec();
                let old = *xs.last().unwrap();
                let len = *gy.shape().last().unwrap();
                let keep = old.min(len);
                let mut dx = Tensor::zeros(&xs);
                for (src, dst) in gyd.chunks(len).zip(dx.data_mut().chunks_mut(old)) {
                    dst[..keep].copy_from_slice(&src[..keep]);
                }
                self.accumulate(x, dx);
            }
            Op::GatherLast { x, index } => {
                let x = *x;
                let old = *self.shape(x).last().unwrap();
                let mut dx = Tensor::zeros(self.shape(x));
                for (src, dst) in gyd.chunks(index.len()).zip(dx.data_mut().chunks_mut(old)) {
                    for (g, &i) in src.iter().zip(index) {
                        dst[i] += g;
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::RelL2 { pred, target, eps } => {
                let scale = gyd[0];
                let batch = self.shape(pred)[0];
                let per = self.value(pred).len() / batch;
                let mut dp = Tensor::zeros(self.shape(pred));
                {
                    let (p, t) = (self.value(pred).data(), self.value(target).data());
                    let dpd = dp.data_mut();
                    for bi in 0..batch {
                        let r = bi * per..(bi + 1) * per;
                        let (num, den) = diff_and_norm(&p[r.clone()], &t[r.clone()]);
                        if num == 0.0 {
                            continue;
                        }
                        let c = scale / (batch as f64 * num * (eps + den));
                        for j in r {
                            dpd[j] = c * (p[j] - t[j]);
                        }
                    }
                }
                self.accumulate(pred, dp);
            }
        }
    }
}

fn view3(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 3, "bmm operands need rank >= 3, got {shape:?}");
    (shape[0], shape[1], shape[2..].iter().product())
}

fn diff_and_norm(p: &[f64], t: &[f64]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in p.iter().zip(t) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    (num.sqrt(), den.sqrt())
}
