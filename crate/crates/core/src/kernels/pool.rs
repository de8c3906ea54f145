//! Ceil-mode pooling windows.
//!
//! Windows start at multiples of the stride and are clipped at the bottom and
//! right borders; the output keeps a partial window whenever its start lies
//! inside the input. With k=3, s=2 this maps 112 → 56 and 4 → 2.

use crate::tensor::Element;

pub fn pooled_len(len: usize, kernel: usize, stride: usize) -> usize {
    let span = len.saturating_sub(kernel);
    let mut out = span.div_ceil(stride) + 1;
    if (out - 1) * stride >= len {
        out -= 1;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct PoolGeometry {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn out_height(&self) -> usize {
        pooled_len(self.height, self.kernel, self.stride)
    }

    pub fn out_width(&self) -> usize {
        pooled_len(self.width, self.kernel, self.stride)
    }

    fn window(&self, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let y0 = oy * self.stride;
        let x0 = ox * self.stride;
        (
            y0..(y0 + self.kernel).min(self.height),
            x0..(x0 + self.kernel).min(self.width),
        )
    }
}

/// Returns pooled values and, for each output, the flat input index of the
/// chosen maximum (first occurrence on ties).
pub fn max_pool_forward<T: Element>(g: &PoolGeometry, input: &[T]) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut out = Vec::with_capacity(g.planes * ho * wo);
    let mut arg = Vec::with_capacity(g.planes * ho * wo);
    for p in 0..g.planes {
        let base = p * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let (ys, xs) = g.window(oy, ox);
                let mut best = base + ys.start * g.width + xs.start;
                for y in ys {
                    for x in xs.clone() {
                        let i = base + y * g.width + x;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn avg_pool_forward<T: Element>(g: &PoolGeometry, input: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut out = Vec::with_capacity(g.planes * ho * wo);
    for p in 0..g.planes {
        let base = p * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let (ys, xs) = g.window(oy, ox);
                let count = T::of((ys.len() * xs.len()) as f64);
                let mut acc = T::zero();
                for y in ys {
                    for x in xs.clone() {
                        acc += input[base + y * g.width + x];
                    }
                }
                out.push(acc / count);
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Element>(g: &PoolGeometry, grad_out: &[T]) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let mut d = vec![T::zero(); g.planes * g.height * g.width];
    for p in 0..g.planes {
        let base = p * g.height * g.width;
        for oy in 0..ho {
            for ox in 0..wo {
                let (ys, xs) = g.window(oy, ox);
                let share = grad_out[(p * ho + oy) * wo + ox] / T::of((ys.len() * xs.len()) as f64);
                for y in ys {
                    for x in xs.clone() {
                        d[base + y * g.width + x] += share;
                    }
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_lengths() {
        assert_eq!(pooled_len(112, 3, 2), 56);
        assert_eq!(pooled_len(4, 3, 2), 2);
        assert_eq!(pooled_len(16, 3, 2), 8);
        assert_eq!(pooled_len(56, 2, 2), 28);
        assert_eq!(pooled_len(7, 2, 2), 4);
        assert_eq!(pooled_len(1, 2, 2), 1);
        assert_eq!(pooled_len(4, 3, 1), 2);
    }
}
