//! Declarative builder for the four residual families: convolutional
//! ResNet, quaternion ResNet, axial-attention ResNet, and the
//! quaternion-enhanced axial ResNet.

mod blocks;
mod spec;

pub(crate) use blocks::BlockPlan;
pub use blocks::{BlockKind, Bottleneck, ConvUnit, Spatial};
pub use spec::{multipliers_for_depth, ArchitectureSpec, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::axial::{axial_flop_count, AxialConfig};
use crate::error::{Error, Result};
use crate::kernels::pool::pooled_len;
use crate::nn::{BatchNorm, Ctx, Linear, Mode, ParamStore};
use crate::quaternion::expand_to_quaternion_input;
use crate::tensor::{Element, Tensor};

const STEM_POOL: (usize, usize) = (3, 2);

#[derive(Debug, Clone)]
pub struct Stem {
    pub conv: ConvUnit,
    pub bn: BatchNorm,
    /// RGB is lifted to `(0, R, G, B)` before a quaternion stem.
    pub lift_rgb: bool,
}

/// The module tree. It holds parameter ids only; values live in the
/// model's [`ParamStore`], so a forward pass borrows the two separately.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ArchitectureSpec,
    pub stem: Stem,
    pub blocks: Vec<Bottleneck>,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    pub net: Network,
    pub store: ParamStore<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    /// Per-sample output shape.
    pub output: Vec<usize>,
    pub params: usize,
}

/// Builds `spec` with weights drawn from a ChaCha8 stream seeded by `seed`.
pub fn build<T: Element>(spec: &ArchitectureSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let variant = spec.variant;
    let [cin, h, w] = spec.input;
    let stem_ch = spec.stem_channels()?;
    let (stem_conv, lift_rgb) = match variant {
        Variant::ResNet => (
            ConvUnit::new(&mut store, "stem", false, cin, stem_ch, 3, 2, &mut rng)?,
            false,
        ),
        Variant::QuatResNet => (
            ConvUnit::new(&mut store, "stem", true, 4, stem_ch, 3, 2, &mut rng)?,
            cin == 3,
        ),
        Variant::Axial | Variant::QuatAxial => (
            ConvUnit::new(&mut store, "stem", false, cin, stem_ch, 7, 2, &mut rng)?,
            false,
        ),
    };
    let stem = Stem {
        bn: BatchNorm::new(&mut store, "stem_bn", stem_ch)?,
        conv: stem_conv,
        lift_rgb,
    };
    let pool = |n: usize| pooled_len(n, STEM_POOL.0, STEM_POOL.1);
    let mut size = (pool(stem.conv.out_size(h)), pool(stem.conv.out_size(w)));
    let kind = match variant {
        Variant::ResNet | Variant::QuatResNet => BlockKind::Conv,
        Variant::Axial => BlockKind::Axial,
        Variant::QuatAxial => BlockKind::QuatAxial,
    };
    let axial = AxialConfig {
        heads: spec.heads,
        positional: spec.positional,
        ..AxialConfig::default()
    };
    let mids = spec.mid_channels()?;
    let mut blocks = Vec::new();
    let mut channels = stem_ch;
    for (g, (&mid, &count)) in mids.iter().zip(&spec.multipliers).enumerate() {
        for b in 0..count {
            let plan = BlockPlan {
                kind,
                quaternion_convs: variant == Variant::QuatResNet,
                in_channels: channels,
                mid_channels: mid,
                out_channels: mid * variant.expansion(),
                stride: if g > 0 && b == 0 { 2 } else { 1 },
                in_size: size,
                axial,
            };
            let block = Bottleneck::new(&mut store, &format!("group{}.block{b}", g + 1), plan, &mut rng)?;
            size = block.out_size();
            channels = block.out_channels;
            blocks.push(block);
        }
    }
    let head = Linear::new(&mut store, "fc", channels, spec.num_classes, &mut rng)?;
    Ok(Model {
        net: Network {
            spec: spec.clone(),
            stem,
            blocks,
            head,
        },
        store,
    })
}

/// Trainable reals of a freshly built `spec`.
pub fn count_params(spec: &ArchitectureSpec) -> Result<usize> {
    Ok(build::<f32>(spec, 0)?.count_params())
}

impl<T: Element> Model<T> {
    pub fn spec(&self) -> &ArchitectureSpec {
        &self.net.spec
    }

    /// Sum over every registered trainable tensor; each shared quaternion
    /// component is one parameter.
    pub fn count_params(&self) -> usize {
        self.store.count_params()
    }

    pub fn count_layers(&self, include_quaternion: bool) -> usize {
        self.net.spec.count_layers(include_quaternion)
    }

    pub fn summarize(&self) -> Vec<SummaryRow> {
        self.net.summarize()
    }

    /// Logits for a batch. Train mode updates batch-norm running statistics.
    pub fn logits(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(&mut self.store, mode);
        let xv = ctx.input(x.clone());
        let y = self.net.forward(&mut ctx, xv)?;
        Ok(ctx.graph.value(y).clone())
    }

    /// The same network without its quaternion banks: an axial model whose
    /// every parameter and buffer is copied by name from `self`.
    pub fn without_banks(&self) -> Result<Model<T>> {
        if self.net.spec.variant != Variant::QuatAxial {
            return Err(Error::config(format!(
                "{} has no quaternion banks",
                self.net.spec.variant
            )));
        }
        let spec = ArchitectureSpec {
            variant: Variant::Axial,
            ..self.net.spec.clone()
        };
        let mut out = build::<T>(&spec, 0)?;
        for p in out.store.params_mut() {
            let src = self
                .store
                .param_by_name(&p.name)
                .ok_or_else(|| Error::contract(format!("no parameter `{}` to copy", p.name)))?;
            p.value = self.store.param(src).value.clone();
        }
        for b in out.store.buffers_mut() {
            let src = self
                .store
                .buffers()
                .iter()
                .find(|s| s.name == b.name)
                .ok_or_else(|| Error::contract(format!("no buffer `{}` to copy", b.name)))?;
            b.value = src.value.clone();
        }
        Ok(out)
    }
}

impl Network {
    /// Attention-core multiply-accumulates per sample, summed over the
    /// axial pairs; zero for convolutional variants.
    pub fn attention_flop_count(&self) -> Result<u64> {
        let mut total = 0;
        for b in &self.blocks {
            if let Spatial::Axial { pair, .. } = &b.spatial {
                let (h, w) = b.in_size;
                total += axial_flop_count(h, w, b.mid_channels, pair.height.heads)?;
            }
        }
        Ok(total)
    }

    pub fn bank_channels(&self) -> usize {
        self.blocks
            .iter()
            .filter_map(Bottleneck::bank)
            .map(|b| b.channels)
            .sum()
    }

    fn stem_output(&self) -> Vec<usize> {
        let [_, h, w] = self.spec.input;
        let pool = |n: usize| pooled_len(n, STEM_POOL.0, STEM_POOL.1);
        let c = match &self.stem.conv {
            ConvUnit::Real(c) => c.out_channels,
            ConvUnit::Quat(q) => q.out_channels(),
        };
        vec![c, pool(self.stem.conv.out_size(h)), pool(self.stem.conv.out_size(w))]
    }

    /// Rows in execution order; quaternion banks get rows of their own.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut rows = vec![SummaryRow {
            name: "stem".into(),
            output: self.stem_output(),
            params: self.stem.conv.param_count() + self.stem.bn.param_count(),
        }];
        for b in &self.blocks {
            if let Some(bank) = b.bank() {
                let [h, w] = [b.in_size.0, b.in_size.1];
                rows.push(SummaryRow {
                    name: format!("{}.bank", b.name),
                    output: vec![bank.channels, h, w],
                    params: bank.param_count(),
                });
            }
            let (h, w) = b.out_size();
            rows.push(SummaryRow {
                name: b.name.clone(),
                output: vec![b.out_channels, h, w],
                params: b.param_count_without_bank(),
            });
        }
        rows.push(SummaryRow {
            name: "fc".into(),
            output: vec![self.spec.num_classes],
            params: self.head.param_count(),
        });
        rows
    }

    /// `[N, C, H, W]` → logits `[N, classes]`, recording the output shape of
    /// the stem and of every block into `trace`.
    pub fn forward_traced<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var, trace: &mut Vec<Vec<usize>>) -> Result<Var> {
        let s = ctx.graph.shape(x).to_vec();
        let [c, h, w] = self.spec.input;
        if s.len() != 4 || s[1] != c {
            return Err(Error::dim(format!(
                "{} expects [N, {c}, H, W], got {s:?}",
                self.spec.variant
            )));
        }
        if self.spec.variant.is_axial() && (s[2] != h || s[3] != w) {
            return Err(Error::config(format!(
                "{} is built for {h}x{w} inputs, got {}x{}",
                self.spec.variant, s[2], s[3]
            )));
        }
        let x = if self.stem.lift_rgb {
            let lifted = expand_to_quaternion_input(ctx.graph.value(x))?;
            ctx.graph.constant(lifted)
        } else {
            x
        };
        let y = self.stem.conv.forward(ctx, x)?;
        let y = self.stem.bn.forward(ctx, y)?;
        let y = ctx.graph.relu(y)?;
        let mut y = ctx.graph.max_pool2d(y, STEM_POOL.0, STEM_POOL.1)?;
        trace.push(ctx.graph.shape(y).to_vec());
        for block in &self.blocks {
            y = block.forward(ctx, y)?;
            trace.push(ctx.graph.shape(y).to_vec());
        }
        let pooled = ctx.graph.global_avg_pool(y)?;
        self.head.forward(ctx, pooled)
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward_traced(ctx, x, &mut Vec::new())
    }
}
