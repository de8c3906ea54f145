//! Hamilton-structured weight expansion and the block-diagonal quaternion bank.
//!
//! A quaternion occupies four consecutive real channels `(r, i, j, k)`.

use crate::quaternion::HAMILTON_SIGNS;
use crate::tensor::Element;

/// `[qo, qi, kh, kw, 4]` → real weight `[4·qo, 4·qi, kh, kw]`.
pub fn expand_weight<T: Element>(q_out: usize, q_in: usize, taps: usize, w: &[T]) -> Vec<T> {
    let c_in = 4 * q_in;
    let mut real = vec![T::zero(); 4 * q_out * c_in * taps];
    for o in 0..q_out {
        for i in 0..q_in {
            for t in 0..taps {
                let quat = &w[((o * q_in + i) * taps + t) * 4..][..4];
                for (a, row) in HAMILTON_SIGNS.iter().enumerate() {
                    for (b, &(comp, sign)) in row.iter().enumerate() {
                        let v = quat[comp];
                        real[((4 * o + a) * c_in + 4 * i + b) * taps + t] = if sign < 0 { -v } else { v };
                    }
                }
            }
        }
    }
    real
}

/// Folds a gradient w.r.t. the expanded real weight back onto the 4 shared
/// components: each component's gradient is the signed sum over its four
/// placements.
pub fn expand_weight_backward<T: Element>(q_out: usize, q_in: usize, taps: usize, d_real: &[T]) -> Vec<T> {
    let c_in = 4 * q_in;
    let mut dw = vec![T::zero(); q_out * q_in * taps * 4];
    for o in 0..q_out {
        for i in 0..q_in {
            for t in 0..taps {
                let dq = &mut dw[((o * q_in + i) * taps + t) * 4..][..4];
                for (a, row) in HAMILTON_SIGNS.iter().enumerate() {
                    for (b, &(comp, sign)) in row.iter().enumerate() {
                        let g = d_real[((4 * o + a) * c_in + 4 * i + b) * taps + t];
                        if sign < 0 {
                            dq[comp] -= g;
                        } else {
                            dq[comp] += g;
                        }
                    }
                }
            }
        }
    }
    dw
}

/// Applies one 4×4 Hamilton matrix per channel group, pixel-wise.
/// `x` is `[N, m, P]`, `w` is `[m/4, 4]`.
pub fn bank_forward<T: Element>(batch: usize, channels: usize, pixels: usize, x: &[T], w: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for n in 0..batch {
        for grp in 0..channels / 4 {
            let quat = &w[grp * 4..grp * 4 + 4];
            let base = (n * channels + 4 * grp) * pixels;
            for (a, row) in HAMILTON_SIGNS.iter().enumerate() {
                let dst = base + a * pixels;
                for (b, &(comp, sign)) in row.iter().enumerate() {
                    let coef = if sign < 0 { -quat[comp] } else { quat[comp] };
                    let src = base + b * pixels;
                    for p in 0..pixels {
                        out[dst + p] += coef * x[src + p];
                    }
                }
            }
        }
    }
    out
}

pub fn bank_backward<T: Element>(
    batch: usize,
    channels: usize,
    pixels: usize,
    x: &[T],
    w: &[T],
    grad_out: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    for n in 0..batch {
        for grp in 0..channels / 4 {
            let quat = &w[grp * 4..grp * 4 + 4];
            let base = (n * channels + 4 * grp) * pixels;
            for (a, row) in HAMILTON_SIGNS.iter().enumerate() {
                let go = &grad_out[base + a * pixels..base + (a + 1) * pixels];
                for (b, &(comp, sign)) in row.iter().enumerate() {
                    let coef = if sign < 0 { -quat[comp] } else { quat[comp] };
                    let src = base + b * pixels;
                    let mut corr = T::zero();
                    for p in 0..pixels {
                        dx[src + p] += coef * go[p];
                        corr += go[p] * x[src + p];
                    }
                    if sign < 0 {
                        dw[grp * 4 + comp] -= corr;
                    } else {
                        dw[grp * 4 + comp] += corr;
                    }
                }
            }
        }
    }
    (dx, dw)
}
