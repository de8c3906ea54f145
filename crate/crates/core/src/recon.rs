//! Grayscale-to-color reconstruction with two parameter-matched
//! convolutional autoencoders: a quaternion one fed `(0, g, g, g)` and a
//! real one fed `g`.
//!
//! Both predict the color image minus the per-channel training mean, and
//! both decoders start at zero, so an untrained model predicts the mean
//! color.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Mode, ParamStore};
use crate::quaternion::QuaternionConv2dLayer;
use crate::tensor::Tensor;
use crate::train::sgd_momentum_step;

/// Luminance weights for R, G, B.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Largest allowed relative gap between the two parameter budgets.
pub const BUDGET_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Hidden quaternions of the quaternion autoencoder.
    pub quat_hidden: usize,
    /// Hidden channels of the real autoencoder.
    pub real_hidden: usize,
    pub kernel: usize,
    /// Every `holdout_every`-th sample is held out for testing.
    pub holdout_every: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            epochs: 5,
            batch_size: 25,
            lr: 0.01,
            momentum: 0.9,
            quat_hidden: 8,
            real_hidden: 16,
            kernel: 3,
            holdout_every: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutcome {
    pub quat_test_mse: f64,
    pub real_test_mse: f64,
    pub quat_params: usize,
    pub real_params: usize,
    /// Variance of the held-out color targets around the training mean.
    pub target_variance: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

/// `[N, 3, H, W]` color → `[N, 1, H, W]` luminance.
pub fn grayscale(rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = rgb.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::dim(format!("grayscale expects [N, 3, H, W], got {s:?}")));
    }
    let plane = s[2] * s[3];
    let mut out = Vec::with_capacity(s[0] * plane);
    for img in rgb.data().chunks(3 * plane) {
        out.extend((0..plane).map(|p| LUMA[0] * img[p] + LUMA[1] * img[plane + p] + LUMA[2] * img[2 * plane + p]));
    }
    Tensor::new(&[s[0], 1, s[2], s[3]], out)
}

enum Autoencoder {
    Quat(QuaternionConv2dLayer, QuaternionConv2dLayer),
    Real(Conv2d, Conv2d),
}

struct Net {
    ae: Autoencoder,
    store: ParamStore<f32>,
}

impl Net {
    fn quaternion(cfg: &ReconConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let (k, pad) = (cfg.kernel, cfg.kernel / 2);
        let enc = QuaternionConv2dLayer::new(&mut store, "enc", 4, 4 * cfg.quat_hidden, k, 1, pad, rng)?;
        let dec = QuaternionConv2dLayer::new(&mut store, "dec", 4 * cfg.quat_hidden, 4, k, 1, pad, rng)?;
        zero(&mut store, "dec.weight");
        Ok(Net {
            ae: Autoencoder::Quat(enc, dec),
            store,
        })
    }

    fn real(cfg: &ReconConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let (k, pad) = (cfg.kernel, cfg.kernel / 2);
        let enc = Conv2d::new(&mut store, "enc", 1, cfg.real_hidden, k, 1, pad, false, rng)?;
        let dec = Conv2d::new(&mut store, "dec", cfg.real_hidden, 3, k, 1, pad, false, rng)?;
        zero(&mut store, "dec.weight");
        Ok(Net {
            ae: Autoencoder::Real(enc, dec),
            store,
        })
    }

    fn param_count(&self) -> usize {
        self.store.count_params()
    }

    /// Input planes for centered gray `g`: `(0, g, g, g)` or `g`.
    fn input(&self, gray: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self.ae {
            Autoencoder::Real(..) => Ok(gray.clone()),
            Autoencoder::Quat(..) => {
                let s = gray.shape();
                let plane = s[2] * s[3];
                let mut out = Vec::with_capacity(4 * gray.len());
                for g in gray.data().chunks(plane) {
                    out.extend(std::iter::repeat_n(0.0, plane));
                    for _ in 0..3 {
                        out.extend_from_slice(g);
                    }
                }
                Tensor::new(&[s[0], 4, s[2], s[3]], out)
            }
        }
    }

    /// Mean squared color error against `target` `[N, 3, H, W]`; with
    /// `lr`, also one momentum step.
    fn run(
        &mut self,
        gray: &Tensor<f32>,
        target: &Tensor<f32>,
        step: Option<(f64, f64, &mut [Tensor<f32>])>,
    ) -> Result<f64> {
        let x = self.input(gray)?;
        let quat = matches!(self.ae, Autoencoder::Quat(..));
        let mut ctx = Ctx::new(&mut self.store, Mode::Train);
        let xv = ctx.input(x);
        let y = match &self.ae {
            Autoencoder::Quat(e, d) => {
                let h = e.forward(&mut ctx, xv)?;
                let h = ctx.graph.relu(h)?;
                d.forward(&mut ctx, h)?
            }
            Autoencoder::Real(e, d) => {
                let h = e.forward(&mut ctx, xv)?;
                let h = ctx.graph.relu(h)?;
                d.forward(&mut ctx, h)?
            }
        };
        // The quaternion output's real part is not a color; mask it and
        // rescale so the loss is the mean over the three color planes.
        let (y, target, scale) = if quat {
            let s = target.shape();
            let plane = s[2] * s[3];
            let mask = Tensor::from_fn(&[s[0], 4, s[2], s[3]], |i| {
                if (i / plane).is_multiple_of(4) {
                    0.0
                } else {
                    1.0
                }
            });
            let m = ctx.graph.constant(mask);
            let y = ctx.graph.mul(y, m)?;
            (y, crate::quaternion::expand_to_quaternion_input(target)?, 4.0 / 3.0)
        } else {
            (y, target.clone(), 1.0)
        };
        let loss = ctx.graph.mse(y, &target)?;
        let loss = ctx.graph.scale(loss, scale)?;
        let value = f64::from(ctx.graph.value(loss).item()?);
        if let Some((lr, momentum, velocity)) = step {
            let grads = ctx.backward(loss)?;
            for (id, g) in grads {
                let p = self.store.param_mut(id);
                sgd_momentum_step(&mut p.value, &g, &mut velocity[id.0], lr, momentum, 0.0)?;
            }
        }
        Ok(value)
    }
}

fn zero(store: &mut ParamStore<f32>, name: &str) {
    let id = store.param_by_name(name).expect("decoder weight registered");
    let p = store.param_mut(id);
    p.value = Tensor::zeros(p.value.shape());
}

/// Centered gray input and centered color target for `indices`.
fn prepare(
    data: &Dataset,
    indices: &[usize],
    gray_mean: f32,
    color_mean: [f32; 3],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (rgb, _) = data.batch::<f32>(indices, &crate::data::AugmentationPolicy::none(), None)?;
    let gray = grayscale(&rgb)?.map(|g| g - gray_mean);
    let plane = rgb.shape()[2] * rgb.shape()[3];
    let target = Tensor::from_fn(rgb.shape(), |i| rgb.data()[i] - color_mean[(i / plane) % 3]);
    Ok((gray, target))
}

fn budgets_match(a: usize, b: usize) -> bool {
    let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
    hi > 0.0 && (hi - lo) / hi <= BUDGET_TOLERANCE
}

/// Trains both autoencoders with the same schedule, batches and seed, and
/// reports their held-out color MSE.
pub fn color_reconstruction_experiment(data: &Dataset, cfg: &ReconConfig, seed: u64) -> Result<ReconOutcome> {
    if data.shape()[0] != 3 {
        return Err(Error::config(format!(
            "color reconstruction needs RGB images, got {:?}",
            data.shape()
        )));
    }
    if cfg.holdout_every < 2 || cfg.batch_size == 0 || cfg.quat_hidden == 0 || cfg.real_hidden == 0 {
        return Err(Error::config(
            "holdout_every ≥ 2 and positive batch size and widths required",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quat = Net::quaternion(cfg, &mut rng)?;
    let mut real = Net::real(cfg, &mut rng)?;
    let (qp, rp) = (quat.param_count(), real.param_count());
    if !budgets_match(qp, rp) {
        return Err(Error::config(format!(
            "parameter budgets differ by more than {}%: quaternion {qp}, real {rp}",
            BUDGET_TOLERANCE * 100.0
        )));
    }
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % cfg.holdout_every != 0);
    if train_idx.len() < 2 || test_idx.is_empty() {
        return Err(Error::config(format!("{} images are too few to split", data.len())));
    }

    let plane = data.shape()[1] * data.shape()[2];
    let mut color_sum = [0f64; 3];
    for &i in &train_idx {
        for (c, s) in color_sum.iter_mut().enumerate() {
            *s += data.image(i)[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| f64::from(v))
                .sum::<f64>();
        }
    }
    let denom = (train_idx.len() * plane) as f64;
    let color_mean = color_sum.map(|s| (s / denom) as f32);
    let gray_mean = (0..3).map(|c| LUMA[c] * color_mean[c]).sum::<f32>();

    let mut velocities: Vec<Vec<Tensor<f32>>> = [&quat, &real]
        .iter()
        .map(|n| {
            n.store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        })
        .collect();
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
        shuffle.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let (gray, target) = prepare(data, chunk, gray_mean, color_mean)?;
            for (net, v) in [&mut quat, &mut real].into_iter().zip(velocities.iter_mut()) {
                let loss = net.run(&gray, &target, Some((cfg.lr, cfg.momentum, v)))?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step: 0, loss });
                }
            }
        }
    }

    let (gray, target) = prepare(data, &test_idx, gray_mean, color_mean)?;
    let target_variance = target.data().iter().map(|&t| f64::from(t) * f64::from(t)).sum::<f64>() / target.len() as f64;
    Ok(ReconOutcome {
        quat_test_mse: quat.run(&gray, &target, None)?,
        real_test_mse: real.run(&gray, &target, None)?,
        quat_params: qp,
        real_params: rp,
        target_variance,
        train_samples: train_idx.len(),
        test_samples: test_idx.len(),
    })
}
