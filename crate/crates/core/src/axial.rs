//! Axial self-attention: multi-head 1D attention along one spatial axis, and
//! the height-then-width pair that replaces the 3×3 convolution of a
//! bottleneck.
//!
//! Each 1D layer projects its input with one 1×1 map `C → heads·(2·dqk + dv)`
//! (per head: query `dqk`, key `dqk`, value `dv = C/heads`, with
//! `dqk = ⌈dv/2⌉`), batch-normalizes the projection, runs the attention core
//! of [`crate::kernels::attention`] with learned relative embeddings, and
//! batch-normalizes the concatenated head outputs. An extra `C×C` output
//! projection can be switched on; the model zoo leaves it off.

use rand::Rng;

use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::kernels::attention::AttentionGeometry;
use crate::nn::{BatchNorm, Ctx, ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxialConfig {
    pub heads: usize,
    /// Relative positional terms in query, key and value paths.
    pub positional: bool,
    pub output_projection: bool,
    /// Batch norm on the qkv projection and on the output.
    pub batch_norm: bool,
}

impl Default for AxialConfig {
    fn default() -> Self {
        AxialConfig {
            heads: DEFAULT_HEADS,
            positional: true,
            output_projection: false,
            batch_norm: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AxialAttention1D {
    pub channels: usize,
    pub heads: usize,
    pub span: usize,
    pub qk_dim: usize,
    pub v_dim: usize,
    /// `[heads·(2·dqk + dv), C, 1, 1]`, per head laid out `q | k | v`.
    pub qkv: ParamId,
    pub qkv_norm: Option<BatchNorm>,
    /// `(r_q [2L−1, dqk], r_k [2L−1, dqk], r_v [2L−1, dv])`.
    pub rel: Option<[ParamId; 3]>,
    /// `[C, C, 1, 1]`.
    pub out_proj: Option<ParamId>,
    pub out_norm: Option<BatchNorm>,
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "axial attention: {channels} channels not divisible by {heads} heads"
        )));
    }
    Ok(())
}

impl AxialAttention1D {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        span: usize,
        config: AxialConfig,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(channels, config.heads)?;
        if span == 0 {
            return Err(Error::config("axial attention span must be positive"));
        }
        let v_dim = channels / config.heads;
        let qk_dim = v_dim.div_ceil(2);
        let packed = config.heads * (2 * qk_dim + v_dim);
        let w = Tensor::randn(&[packed, channels, 1, 1], (1.0 / channels as f64).sqrt(), rng);
        let qkv = store.add_param(format!("{name}.qkv.weight"), ParamKind::ConvWeight, w)?;
        let qkv_norm = if config.batch_norm {
            Some(BatchNorm::new(store, &format!("{name}.qkv_bn"), packed)?)
        } else {
            None
        };
        let rel = if config.positional {
            let rl = 2 * span - 1;
            let mut emb = |suffix: &str, dim: usize| {
                let t = Tensor::randn(&[rl, dim], 1.0 / (dim as f64).sqrt(), rng);
                store.add_param(format!("{name}.rel_{suffix}"), ParamKind::RelEmbedding, t)
            };
            Some([emb("q", qk_dim)?, emb("k", qk_dim)?, emb("v", v_dim)?])
        } else {
            None
        };
        let out_proj = if config.output_projection {
            let w = Tensor::randn(&[channels, channels, 1, 1], (1.0 / channels as f64).sqrt(), rng);
            Some(store.add_param(format!("{name}.out.weight"), ParamKind::ConvWeight, w)?)
        } else {
            None
        };
        let out_norm = if config.batch_norm {
            Some(BatchNorm::new(store, &format!("{name}.out_bn"), channels)?)
        } else {
            None
        };
        Ok(AxialAttention1D {
            channels,
            heads: config.heads,
            span,
            qk_dim,
            v_dim,
            qkv,
            qkv_norm,
            rel,
            out_proj,
            out_norm,
        })
    }

    pub fn packed_channels(&self) -> usize {
        self.heads * (2 * self.qk_dim + self.v_dim)
    }

    pub fn geometry(&self, batch: usize) -> AttentionGeometry {
        AttentionGeometry {
            batch,
            heads: self.heads,
            qk_dim: self.qk_dim,
            v_dim: self.v_dim,
            span: self.span,
        }
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let p = self.packed_channels();
        let rl = 2 * self.span - 1;
        p * c
            + self.qkv_norm.as_ref().map_or(0, BatchNorm::param_count)
            + self.rel.map_or(0, |_| rl * (2 * self.qk_dim + self.v_dim))
            + self.out_proj.map_or(0, |_| c * c)
            + self.out_norm.as_ref().map_or(0, BatchNorm::param_count)
    }

    /// `x: [B, C, L]` → `[B, C, L]`. Returns the output and the attention
    /// node (whose weights are available via
    /// [`crate::Graph::attention_weights`]).
    pub fn forward_traced<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, Var)> {
        let s = ctx.graph.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.channels {
            return Err(Error::dim(format!(
                "axial attention expects [B, {}, L], got {s:?}",
                self.channels
            )));
        }
        if s[2] != self.span {
            return Err(Error::config(format!(
                "axial attention span is {}, input axis has length {}",
                self.span, s[2]
            )));
        }
        let (b, l) = (s[0], s[2]);
        let x4 = ctx.graph.reshape(x, &[b, self.channels, 1, l])?;
        let w = ctx.param(self.qkv);
        let proj = ctx.graph.conv2d(x4, w, None, 1, 0)?;
        let mut qkv = ctx.graph.reshape(proj, &[b, self.packed_channels(), l])?;
        if let Some(bn) = &self.qkv_norm {
            qkv = bn.forward(ctx, qkv)?;
        }
        let rel = self.rel.map(|[q, k, v]| [ctx.param(q), ctx.param(k), ctx.param(v)]);
        let attn = ctx.graph.attention(qkv, rel, self.heads, self.qk_dim, self.v_dim)?;
        let mut out = attn;
        if let Some(p) = self.out_proj {
            let o4 = ctx.graph.reshape(out, &[b, self.channels, 1, l])?;
            let w = ctx.param(p);
            let o4 = ctx.graph.conv2d(o4, w, None, 1, 0)?;
            out = ctx.graph.reshape(o4, &[b, self.channels, l])?;
        }
        if let Some(bn) = &self.out_norm {
            out = bn.forward(ctx, out)?;
        }
        Ok((out, attn))
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, x)?.0)
    }
}

/// Height attention over every column, then width attention over every row,
/// optionally followed by a 2×2 average pool.
#[derive(Debug, Clone)]
pub struct AxialPairModule {
    pub height: AxialAttention1D,
    pub width: AxialAttention1D,
    pub stride: usize,
}

impl AxialPairModule {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
        config: AxialConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::config(format!("axial pair stride must be 1 or 2, got {stride}")));
        }
        Ok(AxialPairModule {
            height: AxialAttention1D::new(store, &format!("{name}.height"), channels, height, config, rng)?,
            width: AxialAttention1D::new(store, &format!("{name}.width"), channels, width, config, rng)?,
            stride,
        })
    }

    pub fn channels(&self) -> usize {
        self.height.channels
    }

    pub fn param_count(&self) -> usize {
        self.height.param_count() + self.width.param_count()
    }

    pub fn out_size(&self, size: usize) -> usize {
        if self.stride == 2 {
            crate::kernels::pool::pooled_len(size, 2, 2)
        } else {
            size
        }
    }

    /// `[N, C, H, W]` → `[N, C, H', W']`.
    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::dim(format!(
                "axial pair expects [N, {}, H, W], got {s:?}",
                self.channels()
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h != self.height.span || w != self.width.span {
            return Err(Error::config(format!(
                "axial pair configured for {}x{}, input is {h}x{w}",
                self.height.span, self.width.span
            )));
        }
        // columns: [N, W, C, H]
        let cols = ctx.graph.permute(x, &[0, 3, 1, 2])?;
        let cols = ctx.graph.reshape(cols, &[n * w, c, h])?;
        let cols = self.height.forward(ctx, cols)?;
        let cols = ctx.graph.reshape(cols, &[n, w, c, h])?;
        let y = ctx.graph.permute(cols, &[0, 2, 3, 1])?;
        // rows: [N, H, C, W]
        let rows = ctx.graph.permute(y, &[0, 2, 1, 3])?;
        let rows = ctx.graph.reshape(rows, &[n * h, c, w])?;
        let rows = self.width.forward(ctx, rows)?;
        let rows = ctx.graph.reshape(rows, &[n, h, c, w])?;
        let y = ctx.graph.permute(rows, &[0, 2, 1, 3])?;
        if self.stride == 2 {
            ctx.graph.avg_pool2d(y, 2, 2)
        } else {
            Ok(y)
        }
    }
}

fn head_dims(channels: usize, heads: usize) -> Result<AttentionGeometry> {
    check_heads(channels, heads)?;
    let v_dim = channels / heads;
    Ok(AttentionGeometry {
        batch: 1,
        heads,
        qk_dim: v_dim.div_ceil(2),
        v_dim,
        span: 1,
    })
}

/// Multiply-accumulates in the attention core of one axial pair on an
/// `H×W` map (projections excluded): every pixel attends to the `H` pixels
/// of its column and then the `W` pixels of its row.
pub fn axial_flop_count(height: usize, width: usize, channels: usize, heads: usize) -> Result<u64> {
    let g = head_dims(channels, heads)?;
    let (h, w) = (height as u64, width as u64);
    Ok(h * w * (h + w) * g.macs_per_pair(true))
}

/// The same core cost for global 2D attention over all `H·W` pixels.
pub fn full_attention_flop_count(height: usize, width: usize, channels: usize, heads: usize) -> Result<u64> {
    let g = head_dims(channels, heads)?;
    let n = (height * width) as u64;
    Ok(n * n * g.macs_per_pair(true))
}
