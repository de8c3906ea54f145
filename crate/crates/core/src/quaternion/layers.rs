use rand::Rng;

use super::quaternion_init_with;
use crate::autodiff::{ParamId, Var};
use crate::error::{Error, Result};
use crate::kernels::quat;
use crate::nn::{Ctx, ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

/// Full quaternion convolution: `q_out × q_in` quaternion kernels, each
/// expanded into a Hamilton-structured 4×4 real block. No bias.
#[derive(Debug, Clone)]
pub struct QuaternionConv2dLayer {
    pub weight: ParamId,
    pub q_in: usize,
    pub q_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl QuaternionConv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !in_channels.is_multiple_of(4) || !out_channels.is_multiple_of(4) {
            return Err(Error::config(format!(
                "{name}: quaternion conv needs channel counts divisible by 4, got {in_channels}→{out_channels}"
            )));
        }
        let (q_in, q_out) = (in_channels / 4, out_channels / 4);
        let w = quaternion_init_with(q_in, q_out, kernel, kernel, rng)?;
        Ok(QuaternionConv2dLayer {
            weight: store.add_param(format!("{name}.weight"), ParamKind::QuatWeight, w)?,
            q_in,
            q_out,
            kernel,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        4 * self.q_in
    }

    pub fn out_channels(&self) -> usize {
        4 * self.q_out
    }

    /// `4 · q_out · q_in · k · k`.
    pub fn param_count(&self) -> usize {
        4 * self.q_out * self.q_in * self.kernel * self.kernel
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.graph.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels() {
            return Err(Error::dim(format!(
                "quaternion conv expects {} input channels (4·{}), got {c}",
                self.in_channels(),
                self.q_in
            )));
        }
        let w = ctx.param(self.weight);
        let real = ctx.graph.quat_expand(w)?;
        ctx.graph.conv2d(x, real, None, self.stride, self.padding)
    }

    /// The equivalent unconstrained real weight `[4·q_out, 4·q_in, k, k]`.
    pub fn expanded_weight<T: Element>(&self, store: &ParamStore<T>) -> Tensor<T> {
        let w = &store.param(self.weight).value;
        let taps = self.kernel * self.kernel;
        let data = quat::expand_weight(self.q_out, self.q_in, taps, w.data());
        Tensor::from_parts(vec![4 * self.q_out, 4 * self.q_in, self.kernel, self.kernel], data)
    }
}

/// Block-diagonal bank of `m/4` independent 1×1 quaternion convolutions, one
/// per group of four consecutive channels. Channel count is unchanged.
#[derive(Debug, Clone)]
pub struct QuaternionBank1x1 {
    pub weight: ParamId,
    pub channels: usize,
}

impl QuaternionBank1x1 {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::config(format!(
                "{name}: quaternion bank needs a channel count divisible by 4, got {channels}"
            )));
        }
        let groups = channels / 4;
        let mut data = Vec::with_capacity(channels);
        for _ in 0..groups {
            data.extend_from_slice(quaternion_init_with::<T, _>(1, 1, 1, 1, rng)?.data());
        }
        let w = Tensor::new(&[groups, 4], data)?;
        Ok(QuaternionBank1x1 {
            weight: store.add_param(format!("{name}.weight"), ParamKind::QuatWeight, w)?,
            channels,
        })
    }

    pub fn groups(&self) -> usize {
        self.channels / 4
    }

    /// Exactly `m`.
    pub fn param_count(&self) -> usize {
        self.channels
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.graph.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::dim(format!(
                "quaternion bank holds {} channels, input has {c}",
                self.channels
            )));
        }
        let w = ctx.param(self.weight);
        ctx.graph.quat_bank(x, w)
    }
}
