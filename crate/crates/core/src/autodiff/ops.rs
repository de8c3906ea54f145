use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::attention::{self, AttentionGeometry, RelEmbeddings};
use crate::kernels::conv::{self, ConvGeometry};
use crate::kernels::norm::{self, NormGeometry};
use crate::kernels::pool::{self, PoolGeometry};
use crate::kernels::quat;
use crate::tensor::{numel, Element, Tensor};

/// `[outer, len, inner]` view of a tensor around one axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisGeometry {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisGeometry {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(AxisGeometry {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    fn lanes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.outer).flat_map(move |o| (0..self.inner).map(move |i| (o * self.len * self.inner + i, self.inner)))
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Softplus(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: NormGeometry,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: NormGeometry,
        normalized: Vec<T>,
        var: Vec<T>,
        eps: f64,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: PoolGeometry,
    },
    GlobalAvgPool {
        x: Var,
        pixels: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul(Var, Var),
    Softmax {
        x: Var,
        geom: AxisGeometry,
    },
    LogSoftmax {
        x: Var,
        geom: AxisGeometry,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        x: Var,
        target: Tensor<T>,
    },
    QuatExpand {
        w: Var,
        q_out: usize,
        q_in: usize,
        taps: usize,
    },
    QuatBank {
        x: Var,
        w: Var,
        batch: usize,
        channels: usize,
        pixels: usize,
    },
    Attention {
        qkv: Var,
        rel: Option<[Var; 3]>,
        geom: AttentionGeometry,
        weights: Vec<T>,
    },
}

impl<T: Element> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNormTrain { .. } => "batch_norm(train)",
            Op::BatchNormEval { .. } => "batch_norm(eval)",
            Op::MaxPool { .. } => "max_pool2d",
            Op::AvgPool { .. } => "avg_pool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::MatMul(..) => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::QuatExpand { .. } => "quat_expand",
            Op::QuatBank { .. } => "quat_bank",
            Op::Attention { .. } => "axial_attention",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Relu(x)
            | Op::Softplus(x)
            | Op::Reshape(x)
            | Op::Permute(x, _) => vec![*x],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNormTrain { x, gamma, beta, .. } | Op::BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::MaxPool { x, .. }
            | Op::AvgPool { x, .. }
            | Op::GlobalAvgPool { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Mse { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::QuatExpand { w, .. } => vec![*w],
            Op::QuatBank { x, w, .. } => vec![*x, *w],
            Op::Attention { qkv, rel, .. } => {
                let mut v = vec![*qkv];
                if let Some(r) = rel {
                    v.extend_from_slice(r);
                }
                v
            }
        }
    }

    /// Gradient contributions to each input given the output gradient.
    pub(crate) fn backward(&self, g: &Graph<T>, idx: usize, grad: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| g.value(v);
        let like = |v: Var, data: Vec<T>| Tensor::from_parts(val(v).shape().to_vec(), data);
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
            Op::Mul(a, b) => {
                let ga = grad.zip_map(val(*b), |d, y| d * y).expect("shapes checked in forward");
                let gb = grad.zip_map(val(*a), |d, x| d * x).expect("shapes checked in forward");
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => {
                let c = T::of(*c);
                vec![(*x, grad.map(|d| d * c))]
            }
            Op::Sum(x) => {
                let d = grad.data()[0];
                vec![(*x, Tensor::full(val(*x).shape(), d))]
            }
            Op::Mean(x) => {
                let d = grad.data()[0] / T::of(val(*x).len() as f64);
                vec![(*x, Tensor::full(val(*x).shape(), d))]
            }
            Op::Relu(x) => {
                let out = grad.zip_map(val(*x), |d, v| if v > T::zero() { d } else { T::zero() });
                vec![(*x, out.expect("same shape"))]
            }
            Op::Softplus(x) => {
                let out = grad.zip_map(val(*x), |d, v| d / (T::one() + (-v).exp()));
                vec![(*x, out.expect("same shape"))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, grad.data().to_vec()))],
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![(*x, grad.permute(&inverse).expect("valid inverse permutation"))]
            }
            Op::Conv2d { x, w, b, geom } => {
                let grads = conv::conv2d_backward(geom, val(*x).data(), val(*w).data(), grad.data());
                let mut out = vec![(*x, like(*x, grads.input)), (*w, like(*w, grads.weight))];
                if let Some(b) = b {
                    out.push((*b, like(*b, grads.bias)));
                }
                out
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                geom,
                normalized,
                inv_std,
            } => {
                let grads = norm::batch_norm_train_backward(geom, grad.data(), normalized, inv_std, val(*gamma).data());
                vec![
                    (*x, like(*x, grads.input)),
                    (*gamma, like(*gamma, grads.gamma)),
                    (*beta, like(*beta, grads.beta)),
                ]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                geom,
                normalized,
                var,
                eps,
            } => {
                let grads =
                    norm::batch_norm_eval_backward(geom, grad.data(), normalized, val(*gamma).data(), var, *eps);
                vec![
                    (*x, like(*x, grads.input)),
                    (*gamma, like(*gamma, grads.gamma)),
                    (*beta, like(*beta, grads.beta)),
                ]
            }
            Op::MaxPool { x, argmax } => {
                let mut d = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(grad.data()) {
                    d[src] += gv;
                }
                vec![(*x, like(*x, d))]
            }
            Op::AvgPool { x, geom } => {
                vec![(*x, like(*x, pool::avg_pool_backward(geom, grad.data())))]
            }
            Op::GlobalAvgPool { x, pixels } => {
                let scale = T::one() / T::of(*pixels as f64);
                let mut d = Vec::with_capacity(val(*x).len());
                for &gv in grad.data() {
                    d.extend(std::iter::repeat_n(gv * scale, *pixels));
                }
                vec![(*x, like(*x, d))]
            }
            Op::Linear { x, w, b } => {
                let xs = val(*x).shape();
                let (n, f) = (xs[0], xs[1]);
                let k = val(*w).shape()[0];
                let mut dx = vec![T::zero(); n * f];
                let mut dw = vec![T::zero(); k * f];
                // dx = dy · W ; dW = dyᵀ · x
                T::gemm(
                    n,
                    k,
                    f,
                    T::one(),
                    grad.data(),
                    k as isize,
                    1,
                    val(*w).data(),
                    f as isize,
                    1,
                    T::zero(),
                    &mut dx,
                    f as isize,
                    1,
                );
                T::gemm(
                    k,
                    n,
                    f,
                    T::one(),
                    grad.data(),
                    1,
                    k as isize,
                    val(*x).data(),
                    f as isize,
                    1,
                    T::zero(),
                    &mut dw,
                    f as isize,
                    1,
                );
                let mut out = vec![(*x, like(*x, dx)), (*w, like(*w, dw))];
                if let Some(b) = b {
                    let mut db = vec![T::zero(); k];
                    for row in grad.data().chunks(k) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::MatMul(a, b) => {
                let (m, kk) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let mut da = vec![T::zero(); m * kk];
                let mut db = vec![T::zero(); kk * n];
                T::gemm(
                    m,
                    n,
                    kk,
                    T::one(),
                    grad.data(),
                    n as isize,
                    1,
                    val(*b).data(),
                    1,
                    n as isize,
                    T::zero(),
                    &mut da,
                    kk as isize,
                    1,
                );
                T::gemm(
                    kk,
                    m,
                    n,
                    T::one(),
                    val(*a).data(),
                    1,
                    kk as isize,
                    grad.data(),
                    n as isize,
                    1,
                    T::zero(),
                    &mut db,
                    n as isize,
                    1,
                );
                vec![(*a, like(*a, da)), (*b, like(*b, db))]
            }
            Op::Softmax { x, geom } => {
                let y = g.nodes[idx].value.data();
                let dy = grad.data();
                let mut d = vec![T::zero(); y.len()];
                for (start, step) in geom.lanes() {
                    let dot: T = (0..geom.len).map(|t| y[start + t * step] * dy[start + t * step]).sum();
                    for t in 0..geom.len {
                        let i = start + t * step;
                        d[i] = y[i] * (dy[i] - dot);
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::LogSoftmax { x, geom } => {
                let y = g.nodes[idx].value.data();
                let dy = grad.data();
                let mut d = vec![T::zero(); y.len()];
                for (start, step) in geom.lanes() {
                    let total: T = (0..geom.len).map(|t| dy[start + t * step]).sum();
                    for t in 0..geom.len {
                        let i = start + t * step;
                        d[i] = dy[i] - y[i].exp() * total;
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = val(*logits).shape()[1];
                let scale = grad.data()[0] / T::of(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (n, &label) in labels.iter().enumerate() {
                    d[n * k + label] -= scale;
                }
                vec![(*logits, like(*logits, d))]
            }
            Op::Mse { x, target } => {
                let scale = T::of(2.0) * grad.data()[0] / T::of(target.len() as f64);
                let d = val(*x).zip_map(target, |a, b| (a - b) * scale).expect("same shape");
                vec![(*x, d)]
            }
            Op::QuatExpand { w, q_out, q_in, taps } => {
                let d = quat::expand_weight_backward(*q_out, *q_in, *taps, grad.data());
                vec![(*w, like(*w, d))]
            }
            Op::QuatBank {
                x,
                w,
                batch,
                channels,
                pixels,
            } => {
                let (dx, dw) =
                    quat::bank_backward(*batch, *channels, *pixels, val(*x).data(), val(*w).data(), grad.data());
                vec![(*x, like(*x, dx)), (*w, like(*w, dw))]
            }
            Op::Attention {
                qkv,
                rel,
                geom,
                weights,
            } => {
                let rel_slices = rel.map(|[q, k, v]| RelEmbeddings {
                    query: val(q).data(),
                    key: val(k).data(),
                    value: val(v).data(),
                });
                let grads =
                    attention::attention_backward(geom, val(*qkv).data(), rel_slices.as_ref(), weights, grad.data());
                let mut out = vec![(*qkv, like(*qkv, grads.qkv))];
                if let Some([q, k, v]) = rel {
                    out.push((*q, like(*q, grads.rel_query)));
                    out.push((*k, like(*k, grads.rel_key)));
                    out.push((*v, like(*v, grads.rel_value)));
                }
                out
            }
        }
    }
}

fn expect_rank(shape: &[usize], rank: usize, op: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::dim(format!("{op} expects rank {rank}, got {shape:?}")));
    }
    Ok(())
}

/// Differentiable operations.
impl<T: Element> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let cc = T::of(c);
        let out = self.value(x).map(|v| v * cc);
        self.push(out, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        self.push(out, Op::Mean(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x))
    }

    /// `ln(1 + eˣ)`, a smooth stand-in for relu.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            if v > T::zero() {
                v + (-v).exp().ln_1p()
            } else {
                v.exp().ln_1p()
            }
        });
        self.push(out, Op::Softplus(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(axes)?;
        self.push(out, Op::Permute(x, axes.to_vec()))
    }

    /// Cross-correlation with zero padding. `x: [N, Cin, H, W]`,
    /// `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank(&xs, 4, "conv2d input")?;
        expect_rank(&ws, 4, "conv2d weight")?;
        if xs[1] != ws[1] {
            return Err(Error::dim(format!(
                "conv2d: input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be ≥ 1"));
        }
        if ws[2] > xs[2] + 2 * padding || ws[3] > xs[3] + 2 * padding {
            return Err(Error::dim(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                ws[2],
                ws[3],
                xs[2] + 2 * padding,
                xs[3] + 2 * padding
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::dim(format!("conv2d bias shape {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ws[0],
            height: xs[2],
            width: xs[3],
            kernel_h: ws[2],
            kernel_w: ws[3],
            stride,
            padding,
        };
        let data = conv::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::from_parts(vec![xs[0], ws[0], geom.out_height(), geom.out_width()], data);
        self.push(out, Op::Conv2d { x, w, b, geom })
    }

    fn norm_geometry(&self, x: Var, gamma: Var, beta: Var) -> Result<NormGeometry> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(Error::dim(format!("batch_norm input {xs:?} needs [N, C, ...]")));
        }
        let c = xs[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm affine parameters must be [{c}], got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(NormGeometry {
            batch: xs[0],
            channels: c,
            inner: xs[2..].iter().product(),
        })
    }

    /// Normalizes with batch statistics over every axis except 1. Returns the
    /// output and the per-channel `(mean, biased variance)` of the batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<T>, Vec<T>)> {
        let geom = self.norm_geometry(x, gamma, beta)?;
        if geom.count() < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm in train mode needs N·H·W ≥ 2, got {}",
                geom.count()
            )));
        }
        let res = norm::batch_norm_train(
            &geom,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::from_parts(self.shape(x).to_vec(), res.output);
        let var = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                geom,
                normalized: res.normalized,
                inv_std: res.inv_std,
            },
        )?;
        Ok((var, res.batch_mean, res.batch_var))
    }

    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let geom = self.norm_geometry(x, gamma, beta)?;
        if mean.len() != geom.channels || var.len() != geom.channels {
            return Err(Error::dim("batch_norm running statistics length mismatch"));
        }
        let (output, normalized) = norm::batch_norm_eval(
            &geom,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            eps,
        );
        let out = Tensor::from_parts(self.shape(x).to_vec(), output);
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                geom,
                normalized,
                var: var.to_vec(),
                eps,
            },
        )
    }

    fn pool_geometry(&self, x: Var, kernel: usize, stride: usize) -> Result<PoolGeometry> {
        let xs = self.shape(x);
        expect_rank(xs, 4, "pooling input")?;
        if kernel == 0 || stride == 0 {
            return Err(Error::contract("pool kernel and stride must be ≥ 1"));
        }
        Ok(PoolGeometry {
            planes: xs[0] * xs[1],
            height: xs[2],
            width: xs[3],
            kernel,
            stride,
        })
    }

    /// Ceil-mode max pooling (see [`crate::kernels::pool`]).
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let geom = self.pool_geometry(x, kernel, stride)?;
        let (data, argmax) = pool::max_pool_forward(&geom, self.value(x).data());
        let xs = self.shape(x);
        let out = Tensor::from_parts(vec![xs[0], xs[1], geom.out_height(), geom.out_width()], data);
        self.push(out, Op::MaxPool { x, argmax })
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let geom = self.pool_geometry(x, kernel, stride)?;
        let data = pool::avg_pool_forward(&geom, self.value(x).data());
        let xs = self.shape(x);
        let out = Tensor::from_parts(vec![xs[0], xs[1], geom.out_height(), geom.out_width()], data);
        self.push(out, Op::AvgPool { x, geom })
    }

    /// `[N, C, H, W]` → `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank(&xs, 4, "global_avg_pool input")?;
        let pixels = xs[2] * xs[3];
        let scale = T::one() / T::of(pixels as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(pixels)
            .map(|p| p.iter().copied().sum::<T>() * scale)
            .collect();
        let out = Tensor::from_parts(vec![xs[0], xs[1]], data);
        self.push(out, Op::GlobalAvgPool { x, pixels })
    }

    /// `x: [N, F]`, `w: [K, F]`, `b: [K]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank(&xs, 2, "linear input")?;
        expect_rank(&ws, 2, "linear weight")?;
        if xs[1] != ws[1] {
            return Err(Error::dim(format!(
                "linear: input features {} vs weight {:?}",
                xs[1], ws
            )));
        }
        let (n, f, k) = (xs[0], xs[1], ws[0]);
        let mut data = vec![T::zero(); n * k];
        if let Some(b) = b {
            if self.shape(b) != [k] {
                return Err(Error::dim(format!("linear bias shape {:?}", self.shape(b))));
            }
            for row in data.chunks_mut(k) {
                row.copy_from_slice(self.value(b).data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(
            n,
            f,
            k,
            T::one(),
            self.value(x).data(),
            f as isize,
            1,
            self.value(w).data(),
            1,
            f as isize,
            beta,
            &mut data,
            k as isize,
            1,
        );
        self.push(Tensor::from_parts(vec![n, k], data), Op::Linear { x, w, b })
    }

    /// 2D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        expect_rank(&as_, 2, "matmul lhs")?;
        expect_rank(&bs, 2, "matmul rhs")?;
        if as_[1] != bs[0] {
            return Err(Error::dim(format!("matmul {as_:?} × {bs:?}")));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut data = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut data,
            n as isize,
            1,
        );
        self.push(Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let geom = AxisGeometry::new(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (start, step) in geom.lanes() {
            let max = (0..geom.len)
                .map(|t| src[start + t * step])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for t in 0..geom.len {
                let e = (src[start + t * step] - max).exp();
                out[start + t * step] = e;
                total += e;
            }
            for t in 0..geom.len {
                out[start + t * step] /= total;
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        self.push(out, Op::Softmax { x, geom })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let geom = AxisGeometry::new(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (start, step) in geom.lanes() {
            let max = (0..geom.len)
                .map(|t| src[start + t * step])
                .fold(T::neg_infinity(), T::max);
            let lse = max
                + (0..geom.len)
                    .map(|t| (src[start + t * step] - max).exp())
                    .sum::<T>()
                    .ln();
            for t in 0..geom.len {
                out[start + t * step] = src[start + t * step] - lse;
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        self.push(out, Op::LogSoftmax { x, geom })
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        expect_rank(&ls, 2, "cross_entropy logits")?;
        let (n, k) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} rows of logits", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} outside [0, {k})")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (row, (&label, p)) in src.chunks(k).zip(labels.iter().zip(probs.chunks_mut(k))) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - max).exp() / total;
            }
            loss += total.ln() + max - row[label];
        }
        let out = Tensor::scalar(loss / T::of(n as f64));
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != target.shape() {
            return Err(Error::dim(format!(
                "mse shapes {:?} vs {:?}",
                v.shape(),
                target.shape()
            )));
        }
        let total: T = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let out = Tensor::scalar(total / T::of(v.len() as f64));
        self.push(
            out,
            Op::Mse {
                x,
                target: target.clone(),
            },
        )
    }

    /// Quaternion weights `[qo, qi, kh, kw, 4]` → Hamilton-structured real
    /// weights `[4·qo, 4·qi, kh, kw]`.
    pub fn quat_expand(&mut self, w: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[4] != 4 {
            return Err(Error::dim(format!(
                "quaternion weight must be [qo, qi, kh, kw, 4], got {ws:?}"
            )));
        }
        let (q_out, q_in, taps) = (ws[0], ws[1], ws[2] * ws[3]);
        let data = quat::expand_weight(q_out, q_in, taps, self.value(w).data());
        let out = Tensor::from_parts(vec![4 * q_out, 4 * q_in, ws[2], ws[3]], data);
        self.push(out, Op::QuatExpand { w, q_out, q_in, taps })
    }

    /// Block-diagonal 1×1 quaternion bank: `x: [N, m, ...]`, `w: [m/4, 4]`.
    pub fn quat_bank(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim(format!("quat_bank input {xs:?}")));
        }
        let channels = xs[1];
        if !channels.is_multiple_of(4) {
            return Err(Error::config(format!(
                "quaternion bank needs channels divisible by 4, got {channels}"
            )));
        }
        if self.shape(w) != [channels / 4, 4] {
            return Err(Error::dim(format!(
                "quaternion bank weight must be [{}, 4], got {:?}",
                channels / 4,
                self.shape(w)
            )));
        }
        let pixels = numel(&xs[2..]);
        let data = quat::bank_forward(xs[0], channels, pixels, self.value(x).data(), self.value(w).data());
        let out = Tensor::from_parts(xs.clone(), data);
        self.push(
            out,
            Op::QuatBank {
                x,
                w,
                batch: xs[0],
                channels,
                pixels,
            },
        )
    }

    /// Multi-head attention core over the last axis of a packed
    /// `[B, heads·(2·dqk + dv), L]` projection (see
    /// [`crate::kernels::attention`]). `rel` holds `(r_q, r_k, r_v)`.
    pub fn attention(
        &mut self,
        qkv: Var,
        rel: Option<[Var; 3]>,
        heads: usize,
        qk_dim: usize,
        v_dim: usize,
    ) -> Result<Var> {
        let s = self.shape(qkv).to_vec();
        expect_rank(&s, 3, "attention input")?;
        let geom = AttentionGeometry {
            batch: s[0],
            heads,
            qk_dim,
            v_dim,
            span: s[2],
        };
        if s[1] != geom.packed_channels() {
            return Err(Error::dim(format!(
                "attention expects {} packed channels, got {}",
                geom.packed_channels(),
                s[1]
            )));
        }
        if let Some([q, k, v]) = rel {
            let rl = geom.rel_len();
            if self.shape(q) != [rl, qk_dim] || self.shape(k) != [rl, qk_dim] || self.shape(v) != [rl, v_dim] {
                return Err(Error::config(format!(
                    "relative embeddings do not match span {}: {:?} {:?} {:?}",
                    geom.span,
                    self.shape(q),
                    self.shape(k),
                    self.shape(v)
                )));
            }
        }
        let rel_slices = rel.map(|[q, k, v]| RelEmbeddings {
            query: self.value(q).data(),
            key: self.value(k).data(),
            value: self.value(v).data(),
        });
        let (data, weights) = attention::attention_forward(&geom, self.value(qkv).data(), rel_slices.as_ref());
        let out = Tensor::from_parts(vec![s[0], geom.out_channels(), s[2]], data);
        self.push(
            out,
            Op::Attention {
                qkv,
                rel,
                geom,
                weights,
            },
        )
    }

    /// Attention probabilities `[B, heads, L, L]` recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }
}
