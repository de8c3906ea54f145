use rand::Rng;

use crate::autodiff::Var;
use crate::axial::{AxialConfig, AxialPairModule};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv2d, Ctx, ParamStore};
use crate::quaternion::{QuaternionBank1x1, QuaternionConv2dLayer};
use crate::tensor::Element;

/// A real or quaternion convolution without bias.
#[derive(Debug, Clone)]
pub enum ConvUnit {
    Real(Conv2d),
    Quat(QuaternionConv2dLayer),
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        quaternion: bool,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let pad = kernel / 2;
        Ok(if quaternion {
            ConvUnit::Quat(QuaternionConv2dLayer::new(
                store, name, cin, cout, kernel, stride, pad, rng,
            )?)
        } else {
            ConvUnit::Real(Conv2d::new(store, name, cin, cout, kernel, stride, pad, false, rng)?)
        })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            ConvUnit::Real(c) => c.forward(ctx, x),
            ConvUnit::Quat(q) => q.forward(ctx, x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ConvUnit::Real(c) => c.param_count(),
            ConvUnit::Quat(q) => q.param_count(),
        }
    }

    pub fn out_size(&self, size: usize) -> usize {
        match self {
            ConvUnit::Real(c) => c.out_size(size),
            ConvUnit::Quat(q) => q.out_size(size),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Conv,
    Axial,
    QuatAxial,
}

/// The spatial stage between the reducing and expanding 1×1 convolutions.
#[derive(Debug, Clone)]
pub enum Spatial {
    /// 3×3 convolution carrying the stride, then bn and relu.
    Conv { conv: ConvUnit, bn: BatchNorm },
    /// Optional quaternion bank, then the axial pair (which pools when
    /// strided), then relu.
    Axial {
        bank: Option<QuaternionBank1x1>,
        pair: AxialPairModule,
    },
}

#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub name: String,
    pub kind: BlockKind,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Spatial size `(H, W)` entering the block.
    pub in_size: (usize, usize),
    pub reduce: ConvUnit,
    pub reduce_bn: BatchNorm,
    pub spatial: Spatial,
    pub expand: ConvUnit,
    pub expand_bn: BatchNorm,
    pub shortcut: Option<(ConvUnit, BatchNorm)>,
}

pub(crate) struct BlockPlan {
    pub kind: BlockKind,
    /// Quaternion convolutions throughout (quaternion ResNet).
    pub quaternion_convs: bool,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub in_size: (usize, usize),
    pub axial: AxialConfig,
}

impl Bottleneck {
    pub(crate) fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        plan: BlockPlan,
        rng: &mut R,
    ) -> Result<Self> {
        let q = plan.quaternion_convs;
        let (cin, mid, out) = (plan.in_channels, plan.mid_channels, plan.out_channels);
        let reduce = ConvUnit::new(store, &format!("{name}.reduce"), q, cin, mid, 1, 1, rng)?;
        let reduce_bn = BatchNorm::new(store, &format!("{name}.reduce_bn"), mid)?;
        let spatial = match plan.kind {
            BlockKind::Conv => Spatial::Conv {
                conv: ConvUnit::new(store, &format!("{name}.conv"), q, mid, mid, 3, plan.stride, rng)?,
                bn: BatchNorm::new(store, &format!("{name}.conv_bn"), mid)?,
            },
            BlockKind::Axial | BlockKind::QuatAxial => {
                let bank = if plan.kind == BlockKind::QuatAxial {
                    Some(QuaternionBank1x1::new(store, &format!("{name}.bank"), mid, rng)?)
                } else {
                    None
                };
                let (h, w) = plan.in_size;
                let pair =
                    AxialPairModule::new(store, &format!("{name}.attn"), mid, h, w, plan.stride, plan.axial, rng)?;
                Spatial::Axial { bank, pair }
            }
        };
        let expand = ConvUnit::new(store, &format!("{name}.expand"), q, mid, out, 1, 1, rng)?;
        let expand_bn = BatchNorm::new(store, &format!("{name}.expand_bn"), out)?;
        let shortcut = if plan.stride != 1 || cin != out {
            Some((
                ConvUnit::new(store, &format!("{name}.shortcut"), q, cin, out, 1, plan.stride, rng)?,
                BatchNorm::new(store, &format!("{name}.shortcut_bn"), out)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            name: name.to_string(),
            kind: plan.kind,
            in_channels: cin,
            mid_channels: mid,
            out_channels: out,
            stride: plan.stride,
            in_size: plan.in_size,
            reduce,
            reduce_bn,
            spatial,
            expand,
            expand_bn,
            shortcut,
        })
    }

    pub fn bank(&self) -> Option<&QuaternionBank1x1> {
        match &self.spatial {
            Spatial::Axial { bank, .. } => bank.as_ref(),
            Spatial::Conv { .. } => None,
        }
    }

    pub fn out_size(&self) -> (usize, usize) {
        let (h, w) = self.in_size;
        match &self.spatial {
            Spatial::Conv { conv, .. } => (conv.out_size(h), conv.out_size(w)),
            Spatial::Axial { pair, .. } => (pair.out_size(h), pair.out_size(w)),
        }
    }

    /// Everything except the quaternion bank.
    pub fn param_count_without_bank(&self) -> usize {
        let spatial = match &self.spatial {
            Spatial::Conv { conv, bn } => conv.param_count() + bn.param_count(),
            Spatial::Axial { pair, .. } => pair.param_count(),
        };
        self.reduce.param_count()
            + self.reduce_bn.param_count()
            + spatial
            + self.expand.param_count()
            + self.expand_bn.param_count()
            + self
                .shortcut
                .as_ref()
                .map_or(0, |(c, bn)| c.param_count() + bn.param_count())
    }

    pub fn param_count(&self) -> usize {
        self.param_count_without_bank() + self.bank().map_or(0, QuaternionBank1x1::param_count)
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.reduce.forward(ctx, x)?;
        let y = self.reduce_bn.forward(ctx, y)?;
        let mut y = ctx.graph.relu(y)?;
        match &self.spatial {
            Spatial::Conv { conv, bn } => {
                y = conv.forward(ctx, y)?;
                y = bn.forward(ctx, y)?;
            }
            Spatial::Axial { bank, pair } => {
                if let Some(bank) = bank {
                    y = bank.forward(ctx, y)?;
                }
                y = pair.forward(ctx, y)?;
            }
        }
        let y = ctx.graph.relu(y)?;
        let y = self.expand.forward(ctx, y)?;
        let y = self.expand_bn.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.graph.add(y, skip)?;
        ctx.graph.relu(sum)
    }
}
