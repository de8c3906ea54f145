use rand::Rng;

use super::{BufferId, Ctx, ParamKind, ParamStore};
use crate::autodiff::{ParamId, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-normal weights, optional zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let w = Tensor::randn(
            &[out_channels, in_channels, kernel, kernel],
            (2.0 / fan_in as f64).sqrt(),
            rng,
        );
        let weight = store.add_param(format!("{name}.weight"), ParamKind::ConvWeight, w)?;
        let bias = if bias {
            Some(store.add_param(
                format!("{name}.bias"),
                ParamKind::LinearBias,
                Tensor::zeros(&[out_channels]),
            )?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.bias.map_or(0, |_| self.out_channels)
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over axis 1 of `[N, C, ...]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add_param(format!("{name}.gamma"), ParamKind::BnGamma, Tensor::ones(&[channels]))?,
            beta: store.add_param(format!("{name}.beta"), ParamKind::BnBeta, Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels]))?,
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        })
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running averages (unbiased variance); eval mode uses the running ones.
    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        if ctx.is_train() {
            let count = ctx.graph.value(x).len() / self.channels;
            let (y, mean, var) = ctx.graph.batch_norm_train(x, gamma, beta, self.eps)?;
            let m = T::of(self.momentum);
            let keep = T::one() - m;
            let unbias = T::of(count as f64 / (count as f64 - 1.0));
            let store = ctx.store_mut();
            for (r, &b) in store
                .buffer_mut(self.running_mean)
                .value
                .data_mut()
                .iter_mut()
                .zip(&mean)
            {
                *r = keep * *r + m * b;
            }
            for (r, &b) in store.buffer_mut(self.running_var).value.data_mut().iter_mut().zip(&var) {
                *r = keep * *r + m * b * unbias;
            }
            Ok(y)
        } else {
            let mean = ctx.store().buffer(self.running_mean).value.data().to_vec();
            let var = ctx.store().buffer(self.running_var).value.data().to_vec();
            ctx.graph.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = Tensor::uniform(&[out_features, in_features], -bound, bound, rng);
        let b = Tensor::uniform(&[out_features], -bound, bound, rng);
        Ok(Linear {
            weight: store.add_param(format!("{name}.weight"), ParamKind::LinearWeight, w)?,
            bias: store.add_param(format!("{name}.bias"), ParamKind::LinearBias, b)?,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.graph.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }
}
