//! 2D cross-correlation via im2col + GEMM.
//!
//! Samples are processed one at a time in batch order; weight and bias
//! gradients are accumulated across samples in that same order, so results
//! are bitwise reproducible.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_line = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(g: &ConvGeometry, input: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let k = g.patch_len();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * plane;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for n in 0..g.batch {
        let image = &input[n * in_len..(n + 1) * in_len];
        let patches: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(plane).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.out_channels,
            k,
            plane,
            T::one(),
            weight,
            k as isize,
            1,
            patches,
            plane as isize,
            1,
            beta,
            dst,
            plane as isize,
            1,
        );
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Element>(g: &ConvGeometry, input: &[T], weight: &[T], grad_out: &[T]) -> ConvGrads<T> {
    let plane = g.out_height() * g.out_width();
    let k = g.patch_len();
    let in_len = g.in_channels * g.height * g.width;
    let out_len = g.out_channels * plane;
    let mut d_input = vec![T::zero(); input.len()];
    let mut d_weight = vec![T::zero(); weight.len()];
    let mut d_bias = vec![T::zero(); g.out_channels];
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    let mut d_cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for n in 0..g.batch {
        let image = &input[n * in_len..(n + 1) * in_len];
        let dout = &grad_out[n * out_len..(n + 1) * out_len];
        for (co, row) in dout.chunks(plane).enumerate() {
            d_bias[co] += row.iter().copied().sum::<T>();
        }
        let patches: &[T] = if pointwise {
            image
        } else {
            im2col(g, image, &mut cols);
            &cols
        };
        // dW += dout · patchesᵀ
        T::gemm(
            g.out_channels,
            plane,
            k,
            T::one(),
            dout,
            plane as isize,
            1,
            patches,
            1,
            plane as isize,
            T::one(),
            &mut d_weight,
            k as isize,
            1,
        );
        // dpatches = Wᵀ · dout
        let d_image = &mut d_input[n * in_len..(n + 1) * in_len];
        if pointwise {
            T::gemm(
                k,
                g.out_channels,
                plane,
                T::one(),
                weight,
                1,
                k as isize,
                dout,
                plane as isize,
                1,
                T::zero(),
                d_image,
                plane as isize,
                1,
            );
        } else {
            T::gemm(
                k,
                g.out_channels,
                plane,
                T::one(),
                weight,
                1,
                k as isize,
                dout,
                plane as isize,
                1,
                T::zero(),
                &mut d_cols,
                plane as isize,
                1,
            );
            col2im(g, &d_cols, d_image);
        }
    }
    ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    }
}
