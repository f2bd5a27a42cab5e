//! Time-conditioned U-Net operators and their variants.

mod blocks;
mod checkpoint;
mod embedding;
mod unet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{Graph, ParamStore, Tensor, Var};

pub use blocks::{attend, Attention, AttentionMode, ConditioningForm, ConditioningHead, Conv, Linear, Norm, ResBlock};
pub use checkpoint::{load, save, CHECKPOINT_VERSION};
pub use embedding::{embed_scalar, positional_code, EmbeddingSpec};
pub use unet::{AttentionPair, Gate, Level, Network};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Ditto,
    /// 1D convolutions over flattened points with a sinusoidal positional code.
    DittoPoint,
    /// Extra convolutional block on every skip connection.
    DittoGate,
    /// Same U-Net with the conditioning path removed.
    BaselineUnet,
}

/// Flattening order of a grid into the point sequence of `DittoPoint`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointOrder {
    /// Last axis fastest.
    #[default]
    RowMajor,
    /// First axis fastest.
    ColumnMajor,
}

impl PointOrder {
    /// `perm[p]` is the row-major index of the `p`-th point in this order.
    pub fn permutation(self, shape: &[usize]) -> Vec<usize> {
        let n: usize = shape.iter().product();
        match self {
            PointOrder::RowMajor => (0..n).collect(),
            PointOrder::ColumnMajor => (0..n)
                .map(|p| {
                    let mut rem = p;
                    let mut idx = vec![0; shape.len()];
                    for (a, &len) in shape.iter().enumerate() {
                        idx[a] = rem % len;
                        rem /= len;
                    }
                    idx.iter().zip(shape).fold(0, |acc, (&i, &len)| acc * len + i)
                })
                .collect(),
        }
    }

    /// Inverse of [`PointOrder::permutation`].
    pub fn inverse(self, shape: &[usize]) -> Vec<usize> {
        let perm = self.permutation(shape);
        let mut inv = vec![0; perm.len()];
        for (p, &r) in perm.iter().enumerate() {
            inv[r] = p;
        }
        inv
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Nodes per spatial axis of the fields the model maps.
    pub grid_shape: Vec<usize>,
    /// Physical `[lo, hi]` per axis, used to normalize coordinates to `[0, 1]`.
    pub coord_bounds: Vec<[f64; 2]>,
    pub base_channels: usize,
    /// One entry per level; channels at level `i` are `base_channels * mults[i]`.
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    /// Encoder/decoder levels with attention, besides the bottleneck.
    pub attention_levels: Vec<usize>,
    pub use_attention: bool,
    pub attention_softmax: bool,
    pub conditioning: ConditioningForm,
    pub embedding: EmbeddingSpec,
    /// Multiplier applied to the conditioning scalar before embedding.
    pub time_scale: f64,
    pub conditioning_scalar_name: String,
    pub gate_enabled: bool,
    pub norm_groups: usize,
    /// Point variant: multiplier on normalized coordinates before embedding.
    pub coord_scale: f64,
    /// Point variant: phase shift between the codes of successive axes.
    pub axis_offset: f64,
    pub point_order: PointOrder,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ditto,
            grid_shape: vec![128],
            coord_bounds: vec![[0.0, 1.0]],
            base_channels: 16,
            channel_mults: vec![1, 2, 2, 2],
            blocks_per_level: 1,
            attention_levels: Vec::new(),
            use_attention: true,
            attention_softmax: true,
            conditioning: ConditioningForm::OnePlus,
            embedding: EmbeddingSpec::default(),
            time_scale: 100.0,
            conditioning_scalar_name: "time".into(),
            gate_enabled: true,
            norm_groups: 8,
            coord_scale: 100.0,
            axis_offset: 1000.0,
            point_order: PointOrder::RowMajor,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn spatial_dims(&self) -> usize {
        self.grid_shape.len()
    }

    /// Rank of the convolutions: 1 for the point variant, else the grid rank.
    pub fn conv_dims(&self) -> usize {
        match self.variant {
            Variant::DittoPoint => 1,
            _ => self.spatial_dims(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.grid_shape.iter().product()
    }

    /// Point sequence length after padding to a multiple of `2^(levels-1)`.
    pub fn padded_points(&self) -> usize {
        let m = 1usize << (self.levels().saturating_sub(1));
        self.n_points().div_ceil(m) * m
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spatial_dims();
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(format!("grid must have 1 to 3 axes, got {d}")));
        }
        if self.coord_bounds.len() != d {
            return Err(Error::invalid(format!("coord_bounds has {} axes, grid has {d}", self.coord_bounds.len())));
        }
        if self.coord_bounds.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
            return Err(Error::invalid("coord_bounds must be finite with hi > lo"));
        }
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return Err(Error::invalid("channel_mults needs at least one level and nonzero entries"));
        }
        if self.base_channels == 0 || self.blocks_per_level == 0 || self.norm_groups == 0 {
            return Err(Error::invalid("base_channels, blocks_per_level and norm_groups must be >= 1"));
        }
        if let Some(&l) = self.attention_levels.iter().find(|&&l| l >= self.levels()) {
            return Err(Error::invalid(format!("attention level {l} exceeds level count {}", self.levels())));
        }
        self.embedding.validate()?;
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::invalid("time_scale must be finite and > 0"));
        }
        if !(self.coord_scale.is_finite() && self.coord_scale > 0.0 && self.axis_offset.is_finite()) {
            return Err(Error::invalid("coord_scale must be > 0 and axis_offset finite"));
        }
        let factor = 1usize << (self.levels() - 1);
        match self.variant {
            Variant::DittoPoint => {
                if self.n_points() == 0 {
                    return Err(Error::invalid("point variant needs at least one point"));
                }
            }
            _ => {
                for &n in &self.grid_shape {
                    if n % factor != 0 || n / factor < 2 {
                        return Err(Error::invalid(format!(
                            "axis of {n} nodes cannot be halved {} times down to >= 2 nodes",
                            self.levels() - 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Normalized grid coordinates in `[0, 1]`, row-major, one row per point.
    fn normalized_points(&self, grid: &Grid) -> Vec<Vec<f64>> {
        grid.points()
            .into_iter()
            .map(|p| p.iter().zip(&self.coord_bounds).map(|(x, [lo, hi])| (x - lo) / (hi - lo)).collect())
            .collect()
    }

    /// Grid implied by `grid_shape` and `coord_bounds` (closed intervals).
    pub fn grid(&self) -> Grid {
        Grid {
            axes: self
                .grid_shape
                .iter()
                .zip(&self.coord_bounds)
                .map(|(&n, [lo, hi])| (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect())
                .collect(),
        }
    }
}

/// A built network with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub net: Network,
    pub grid: Grid,
    /// Fixed input features per point: `(features, positions)` row-major.
    features: Vec<f64>,
    feature_channels: usize,
}

impl Model {
    /// Build with coordinate features from the default grid of `config`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let grid = config.grid();
        Self::with_grid(config, &grid)
    }

    /// Build with explicit node coordinates (must match `grid_shape`).
    pub fn with_grid(config: ModelConfig, grid: &Grid) -> Result<Self> {
        config.validate()?;
        if grid.shape() != config.grid_shape {
            return Err(Error::shape(format!("grid {:?} does not match config {:?}", grid.shape(), config.grid_shape)));
        }
        let points = config.normalized_points(grid);
        let (features, feature_channels) = match config.variant {
            Variant::DittoPoint => {
                let perm = config.point_order.permutation(&config.grid_shape);
                let ordered: Vec<Vec<f64>> = perm.iter().map(|&r| points[r].clone()).collect();
                (point_features(&config, &ordered)?, config.embedding.d_emb)
            }
            _ => {
                let d = config.spatial_dims();
                let mut f = vec![0.0; d * points.len()];
                for (p, x) in points.iter().enumerate() {
                    for a in 0..d {
                        f[a * points.len() + p] = x[a];
                    }
                }
                (f, d)
            }
        };
        let mut params = ParamStore::new();
        let net = Network::build(&config, &mut params, 1 + feature_channels);
        params.round_to_f32();
        Ok(Self { config, params, net, grid: grid.clone(), features, feature_channels })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn is_conditioned(&self) -> bool {
        self.config.variant != Variant::BaselineUnet
    }

    /// Sinusoidal codes of the scaled scalars, `(batch, d_emb)`.
    pub fn embedding_tensor(&self, scalars: &[f64]) -> Result<Tensor> {
        let d = self.config.embedding.d_emb;
        let mut data = Vec::with_capacity(scalars.len() * d);
        for &t in scalars {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::invalid(format!("{} must be finite and >= 0, got {t}", self.config.conditioning_scalar_name)));
            }
            data.extend(embed_scalar(t * self.config.time_scale, d)?);
        }
        Ok(Tensor::from_vec(&[scalars.len(), d], data))
    }

    /// Network input `(batch, 1 + features, positions)`, laid out for the
    /// convolution rank of the variant.
    fn input_tensor(&self, x0: &Tensor) -> Result<Tensor> {
        let shape = x0.shape();
        if shape.len() != self.config.spatial_dims() + 1 || shape[1..] != self.config.grid_shape[..] {
            return Err(Error::shape(format!(
                "input {shape:?} does not match (batch, {:?})",
                self.config.grid_shape
            )));
        }
        if !x0.all_finite() {
            return Err(Error::invalid("input field contains non-finite values"));
        }
        let batch = shape[0];
        let n = self.config.n_points();
        let (positions, order) = match self.config.variant {
            Variant::DittoPoint => (self.config.padded_points(), Some(self.config.point_order.permutation(&self.config.grid_shape))),
            _ => (n, None),
        };
        let ch = 1 + self.feature_channels;
        let mut data = vec![0.0; batch * ch * positions];
        for b in 0..batch {
            let src = &x0.data()[b * n..(b + 1) * n];
            let dst = &mut data[b * ch * positions..(b + 1) * ch * positions];
            match &order {
                Some(perm) => perm.iter().enumerate().for_each(|(p, &r)| dst[p] = src[r]),
                None => dst[..n].copy_from_slice(src),
            }
            for c in 0..self.feature_channels {
                let f = &self.features[c * positions..(c + 1) * positions];
                dst[(1 + c) * positions..(2 + c) * positions].copy_from_slice(f);
            }
        }
        let mut ishape = vec![batch, ch];
        match self.config.variant {
            Variant::DittoPoint => ishape.push(positions),
            _ => ishape.extend(&self.config.grid_shape),
        }
        Ok(Tensor::from_vec(&ishape, data))
    }

    /// Record the forward pass on `g` using parameters from `params`.
    /// `x0`: `(batch, grid...)`, one scalar per sample. Returns `(batch, grid...)`.
    pub fn forward_graph(&self, g: &mut Graph, params: &ParamStore, x0: &Tensor, scalars: &[f64]) -> Result<Var> {
        if scalars.len() != x0.shape()[0] {
            return Err(Error::shape(format!("{} scalars for batch of {}", scalars.len(), x0.shape()[0])));
        }
        let input = self.input_tensor(x0)?;
        let emb = if self.is_conditioned() { Some(self.embedding_tensor(scalars)?) } else { None };
        let x = g.input(input, false);
        let e = emb.map(|t| g.input(t, false));
        let y = self.net.forward(g, params, x, e, self.config.gate_enabled)?;
        let mut out_shape = vec![x0.shape()[0]];
        out_shape.extend(&self.config.grid_shape);
        Ok(match self.config.variant {
            Variant::DittoPoint => {
                let y = g.resize_last(y, self.config.n_points());
                let inv = self.config.point_order.inverse(&self.config.grid_shape);
                let y = g.gather_last(y, &inv);
                g.reshape(y, &out_shape)
            }
            _ => g.reshape(y, &out_shape),
        })
    }

    /// Inference for a batch of initial fields and scalars.
    pub fn forward(&self, x0: &Tensor, scalars: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let y = self.forward_graph(&mut g, &self.params, x0, scalars)?;
        Ok(g.value(y).clone())
    }

    /// Point-variant forward on arbitrary coordinates. `values`: `(batch, N)`;
    /// `coords`: N physical points, normalized with `coord_bounds`.
    pub fn point_forward(&self, values: &Tensor, coords: &[Vec<f64>], scalars: &[f64]) -> Result<Tensor> {
        if self.config.variant != Variant::DittoPoint {
            return Err(Error::invalid("point_forward requires the ditto_point variant"));
        }
        let n = coords.len();
        if n == 0 || values.shape().len() != 2 || values.shape()[1] != n || scalars.len() != values.shape()[0] {
            return Err(Error::shape(format!("values {:?} vs {n} coordinates and {} scalars", values.shape(), scalars.len())));
        }
        if coords.iter().any(|c| c.len() != self.config.spatial_dims() || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("coordinates must be finite with one entry per axis"));
        }
        if !values.all_finite() {
            return Err(Error::invalid("input values contain non-finite entries"));
        }
        let normalized: Vec<Vec<f64>> = coords
            .iter()
            .map(|p| p.iter().zip(&self.config.coord_bounds).map(|(x, [lo, hi])| (x - lo) / (hi - lo)).collect())
            .collect();
        let m = 1usize << (self.config.levels() - 1);
        let positions = n.div_ceil(m) * m;
        let codes = positional_codes(&self.config, &normalized, positions);
        let (batch, d_emb) = (values.shape()[0], self.config.embedding.d_emb);
        let ch = 1 + d_emb;
        let mut data = vec![0.0; batch * ch * positions];
        for b in 0..batch {
            let dst = &mut data[b * ch * positions..(b + 1) * ch * positions];
            dst[..n].copy_from_slice(&values.data()[b * n..(b + 1) * n]);
            dst[positions..].copy_from_slice(&codes);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[batch, ch, positions], data), false);
        let e = g.input(self.embedding_tensor(scalars)?, false);
        let y = self.net.forward(&mut g, &self.params, x, Some(e), self.config.gate_enabled)?;
        let y = g.resize_last(y, n);
        Ok(g.value(y).clone().reshape(&[batch, n]))
    }
}

fn positional_codes(cfg: &ModelConfig, normalized: &[Vec<f64>], positions: usize) -> Vec<f64> {
    let d = cfg.embedding.d_emb;
    let mut f = vec![0.0; d * positions];
    for (p, x) in normalized.iter().enumerate() {
        for (c, v) in positional_code(x, d, cfg.coord_scale, cfg.axis_offset).into_iter().enumerate() {
            f[c * positions + p] = v;
        }
    }
    f
}

fn point_features(cfg: &ModelConfig, ordered: &[Vec<f64>]) -> Result<Vec<f64>> {
    if ordered.is_empty() {
        return Err(Error::invalid("point variant needs at least one point"));
    }
    Ok(positional_codes(cfg, ordered, cfg.padded_points()))
}
