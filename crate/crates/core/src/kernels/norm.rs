//! Per-channel batch normalization over axis 1 of `[N, C, ...]`.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy)]
pub struct NormGeometry {
    pub batch: usize,
    pub channels: usize,
    /// Product of the trailing (spatial) extents.
    pub inner: usize,
}

impl NormGeometry {
    pub fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn for_channel<T: Copy>(&self, data: &[T], c: usize, mut f: impl FnMut(usize, T)) {
        for n in 0..self.batch {
            let start = (n * self.channels + c) * self.inner;
            for (i, &v) in data[start..start + self.inner].iter().enumerate() {
                f(start + i, v);
            }
        }
    }
}

pub struct NormTrainOut<T> {
    pub output: Vec<T>,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased batch variance (what the forward pass divides by).
    pub batch_var: Vec<T>,
}

pub fn batch_norm_train<T: Element>(g: &NormGeometry, x: &[T], gamma: &[T], beta: &[T], eps: f64) -> NormTrainOut<T> {
    let m = T::of(g.count() as f64);
    let mut output = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(g.channels);
    let mut batch_mean = Vec::with_capacity(g.channels);
    let mut batch_var = Vec::with_capacity(g.channels);
    for c in 0..g.channels {
        let mut sum = T::zero();
        g.for_channel(x, c, |_, v| sum += v);
        let mean = sum / m;
        let mut sq = T::zero();
        g.for_channel(x, c, |_, v| sq += (v - mean) * (v - mean));
        let var = sq / m;
        let istd = T::one() / (var + T::of(eps)).sqrt();
        g.for_channel(x, c, |i, v| {
            let xh = (v - mean) * istd;
            normalized[i] = xh;
            output[i] = gamma[c] * xh + beta[c];
        });
        inv_std.push(istd);
        batch_mean.push(mean);
        batch_var.push(var);
    }
    NormTrainOut {
        output,
        normalized,
        inv_std,
        batch_mean,
        batch_var,
    }
}

pub struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm_train_backward<T: Element>(
    g: &NormGeometry,
    grad_out: &[T],
    normalized: &[T],
    inv_std: &[T],
    gamma: &[T],
) -> NormGrads<T> {
    let m = T::of(g.count() as f64);
    let mut d_input = vec![T::zero(); grad_out.len()];
    let mut d_gamma = Vec::with_capacity(g.channels);
    let mut d_beta = Vec::with_capacity(g.channels);
    for c in 0..g.channels {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        g.for_channel(grad_out, c, |i, dy| {
            sum_dy += dy;
            sum_dy_xh += dy * normalized[i];
        });
        let scale = gamma[c] * inv_std[c] / m;
        g.for_channel(grad_out, c, |i, dy| {
            d_input[i] = scale * (m * dy - sum_dy - normalized[i] * sum_dy_xh);
        });
        d_gamma.push(sum_dy_xh);
        d_beta.push(sum_dy);
    }
    NormGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    }
}

/// Returns `(output, normalized)` using fixed statistics.
pub fn batch_norm_eval<T: Element>(
    g: &NormGeometry,
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: f64,
) -> (Vec<T>, Vec<T>) {
    let mut output = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    for c in 0..g.channels {
        let istd = T::one() / (var[c] + T::of(eps)).sqrt();
        g.for_channel(x, c, |i, v| {
            let xh = (v - mean[c]) * istd;
            normalized[i] = xh;
            output[i] = gamma[c] * xh + beta[c];
        });
    }
    (output, normalized)
}

pub fn batch_norm_eval_backward<T: Element>(
    g: &NormGeometry,
    grad_out: &[T],
    normalized: &[T],
    gamma: &[T],
    var: &[T],
    eps: f64,
) -> NormGrads<T> {
    let mut d_input = vec![T::zero(); grad_out.len()];
    let mut d_gamma = vec![T::zero(); g.channels];
    let mut d_beta = vec![T::zero(); g.channels];
    for c in 0..g.channels {
        let scale = gamma[c] / (var[c] + T::of(eps)).sqrt();
        g.for_channel(grad_out, c, |i, dy| {
            d_input[i] = scale * dy;
            d_gamma[c] += dy * normalized[i];
            d_beta[c] += dy;
        });
    }
    NormGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    }
}
