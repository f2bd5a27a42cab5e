//! U-Net topology shared by all variants.

use crate::error::Result;
use crate::nn::{Activation, ConvGeom, Graph, ParamStore, Var};

use super::blocks::{
    Attention, AttentionMode, Builder, ConditioningHead, Conv, Norm, ResBlock, ResBlockSpec,
};
use super::{ModelConfig, Variant};

/// Unconditioned convolutional block on an encoder-decoder skip tensor. The
/// last convolution starts at zero, so a fresh gate is the identity.
#[derive(Clone, Debug)]
pub struct Gate {
    pub conv1: Conv,
    pub norm1: Norm,
    pub conv2: Conv,
}

impl Gate {
    fn build(b: &mut Builder, name: &str, ch: usize, groups: usize) -> Self {
        Self {
            conv1: b.conv(&format!("{name}.conv1"), ch, ch, ConvGeom::same(3), false),
            norm1: b.norm(&format!("{name}.norm1"), ch, groups),
            conv2: b.conv(&format!("{name}.conv2"), ch, ch, ConvGeom::same(3), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, skip: Var) -> Var {
        let h = self.conv1.forward(g, s, skip);
        let h = self.norm1.forward(g, s, h);
        let h = g.act(h, Activation::Silu);
        let h = self.conv2.forward(g, s, h);
        g.add(skip, h)
    }
}

/// Spatial then channel attention at one site.
#[derive(Clone, Debug)]
pub struct AttentionPair {
    pub spatial: Attention,
    pub channel: Attention,
}

impl AttentionPair {
    fn build(b: &mut Builder, name: &str, ch: usize, groups: usize, softmax: bool) -> Self {
        Self {
            spatial: Attention::build(b, &format!("{name}.spatial"), ch, groups, AttentionMode::Spatial, softmax),
            channel: Attention::build(b, &format!("{name}.channel"), ch, groups, AttentionMode::Channel, softmax),
        }
    }

    fn forward(&self, g: &mut Graph, s: &ParamStore, h: Var) -> Result<Var> {
        let h = self.spatial.forward(g, s, h)?;
        self.channel.forward(g, s, h)
    }
}

#[derive(Clone, Debug)]
pub struct Level {
    pub blocks: Vec<ResBlock>,
    pub attention: Option<AttentionPair>,
}

impl Level {
    fn forward(&self, g: &mut Graph, s: &ParamStore, mut h: Var, f: Option<Var>) -> Result<Var> {
        for b in &self.blocks {
            h = b.forward(g, s, h, f);
        }
        match &self.attention {
            Some(a) => a.forward(g, s, h),
            None => Ok(h),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub head: Option<ConditioningHead>,
    pub conv_in: Conv,
    pub encoder: Vec<Level>,
    pub down: Vec<Conv>,
    pub mid1: ResBlock,
    pub mid_attention: Option<AttentionPair>,
    pub mid2: ResBlock,
    /// Indexed by level; `up[i]` maps level `i + 1` back to level `i`.
    pub up: Vec<Conv>,
    pub gates: Vec<Gate>,
    pub decoder: Vec<Level>,
    pub norm_out: Norm,
    pub conv_out: Conv,
}

impl Network {
    pub(crate) fn build(cfg: &ModelConfig, store: &mut ParamStore, in_channels: usize) -> Self {
        let dims = cfg.conv_dims();
        let mut b = Builder::new(store, cfg.seed, dims);
        let conditioned = cfg.variant != Variant::BaselineUnet;
        let groups = cfg.norm_groups;
        let head = conditioned.then(|| ConditioningHead::build(&mut b, cfg.embedding.d_emb, cfg.embedding.mlp_hidden));
        let cond_width = conditioned.then_some(cfg.embedding.mlp_hidden);
        let spec = |cin, cout| ResBlockSpec {
            cin,
            cout,
            cond_width,
            groups,
            normalize: true,
            act: Activation::Silu,
            form: cfg.conditioning,
            zero_last: false,
        };
        let ch: Vec<usize> = cfg.channel_mults.iter().map(|m| m * cfg.base_channels).collect();
        let levels = ch.len();
        let attn_here = |i: usize| cfg.use_attention && cfg.attention_levels.contains(&i);

        let conv_in = b.conv("conv_in", in_channels, ch[0], ConvGeom::same(3), false);
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        let mut prev = ch[0];
        for (i, &c) in ch.iter().enumerate() {
            let blocks = (0..cfg.blocks_per_level)
                .map(|j| {
                    let blk = ResBlock::build(&mut b, &format!("enc{i}.block{j}"), spec(prev, c));
                    prev = c;
                    blk
                })
                .collect();
            let attention = attn_here(i).then(|| AttentionPair::build(&mut b, &format!("enc{i}.attn"), c, groups, cfg.attention_softmax));
            encoder.push(Level { blocks, attention });
            if i + 1 < levels {
                down.push(b.conv(&format!("down{i}"), c, c, ConvGeom::down(3), false));
            }
        }
        let c_mid = ch[levels - 1];
        let mid1 = ResBlock::build(&mut b, "mid.block0", spec(c_mid, c_mid));
        let mid_attention = cfg.use_attention.then(|| AttentionPair::build(&mut b, "mid.attn", c_mid, groups, cfg.attention_softmax));
        let mid2 = ResBlock::build(&mut b, "mid.block1", spec(c_mid, c_mid));

        let mut up = Vec::new();
        let mut gates = Vec::new();
        let mut decoder = Vec::new();
        for i in 0..levels.saturating_sub(1) {
            up.push(b.conv(&format!("up{i}"), ch[i + 1], ch[i], ConvGeom::same(3), false));
            if cfg.variant == Variant::DittoGate {
                gates.push(Gate::build(&mut b, &format!("gate{i}"), ch[i], groups));
            }
            let mut cin = 2 * ch[i];
            let blocks = (0..cfg.blocks_per_level)
                .map(|j| {
                    let blk = ResBlock::build(&mut b, &format!("dec{i}.block{j}"), spec(cin, ch[i]));
                    cin = ch[i];
                    blk
                })
                .collect();
            let attention = attn_here(i).then(|| AttentionPair::build(&mut b, &format!("dec{i}.attn"), ch[i], groups, cfg.attention_softmax));
            decoder.push(Level { blocks, attention });
        }
        let norm_out = b.norm("norm_out", ch[0], groups);
        let conv_out = b.conv("conv_out", ch[0], 1, ConvGeom::same(3), false);
        Self { head, conv_in, encoder, down, mid1, mid_attention, mid2, up, gates, decoder, norm_out, conv_out }
    }

    /// `x`: `(batch, in_channels, spatial...)`; `emb`: `(batch, d_emb)` codes
    /// of the conditioning scalar, ignored by unconditioned networks.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, emb: Option<Var>, gate_enabled: bool) -> Result<Var> {
        let f = match (&self.head, emb) {
            (Some(head), Some(e)) => Some(head.forward(g, s, e)),
            _ => None,
        };
        let mut h = self.conv_in.forward(g, s, x);
        let mut skips = Vec::new();
        for (i, level) in self.encoder.iter().enumerate() {
            h = level.forward(g, s, h, f)?;
            if let Some(d) = self.down.get(i) {
                skips.push(h);
                h = d.forward(g, s, h);
            }
        }
        h = self.mid1.forward(g, s, h, f);
        if let Some(a) = &self.mid_attention {
            h = a.forward(g, s, h)?;
        }
        h = self.mid2.forward(g, s, h, f);
        for i in (0..self.decoder.len()).rev() {
            let u = g.upsample(h);
            h = self.up[i].forward(g, s, u);
            let mut skip = skips[i];
            if gate_enabled {
                if let Some(gate) = self.gates.get(i) {
                    skip = gate.forward(g, s, skip);
                }
            }
            h = g.concat(h, skip);
            h = self.decoder[i].forward(g, s, h, f)?;
        }
        let h = self.norm_out.forward(g, s, h);
        let h = g.act(h, Activation::Silu);
        Ok(self.conv_out.forward(g, s, h))
    }
}
