//! Multi-head 1D self-attention core with relative positional terms.
//!
//! Input is a packed projection `[B, heads·(2·dqk + dv), L]`; within each
//! head the channels are laid out `q (dqk) | k (dqk) | v (dv)`. Relative
//! embeddings are indexed by `p − o + L − 1` for query `o` and key `p` and are
//! shared across heads.
//!
//! For query `o` and key `p` of one head:
//!   logit(o,p) = q_o·k_p + q_o·rq[p−o] + k_p·rk[p−o]
//!   out_o      = Σ_p softmax_p(logit)(o,p) · (v_p + rv[p−o])
//!
//! Batches are processed in order; embedding gradients are summed over
//! batches and heads in that order.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionGeometry {
    pub batch: usize,
    pub heads: usize,
    pub qk_dim: usize,
    pub v_dim: usize,
    pub span: usize,
}

impl AttentionGeometry {
    pub fn packed_channels(&self) -> usize {
        self.heads * (2 * self.qk_dim + self.v_dim)
    }

    pub fn out_channels(&self) -> usize {
        self.heads * self.v_dim
    }

    pub fn rel_len(&self) -> usize {
        2 * self.span - 1
    }

    /// Multiply-accumulates per (query, key) pair summed over heads.
    pub fn macs_per_pair(&self, positional: bool) -> u64 {
        let per_head = if positional {
            3 * self.qk_dim + 2 * self.v_dim
        } else {
            self.qk_dim + self.v_dim
        };
        (self.heads * per_head) as u64
    }
}

pub struct RelEmbeddings<'a, T> {
    pub query: &'a [T],
    pub key: &'a [T],
    pub value: &'a [T],
}

struct HeadView<T> {
    /// `[L, dqk]`
    q: Vec<T>,
    /// `[L, dqk]`
    k: Vec<T>,
    /// `[L, dv]`
    v: Vec<T>,
}

fn gather_head<T: Element>(g: &AttentionGeometry, qkv: &[T], b: usize, h: usize) -> HeadView<T> {
    let l = g.span;
    let base = (b * g.packed_channels() + h * (2 * g.qk_dim + g.v_dim)) * l;
    let transpose = |offset: usize, dim: usize| {
        let mut out = vec![T::zero(); l * dim];
        for c in 0..dim {
            let row = &qkv[base + (offset + c) * l..base + (offset + c + 1) * l];
            for (pos, &x) in row.iter().enumerate() {
                out[pos * dim + c] = x;
            }
        }
        out
    };
    HeadView {
        q: transpose(0, g.qk_dim),
        k: transpose(g.qk_dim, g.qk_dim),
        v: transpose(2 * g.qk_dim, g.v_dim),
    }
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Returns `(output [B, heads·dv, L], attention weights [B, heads, L, L])`.
pub fn attention_forward<T: Element>(
    g: &AttentionGeometry,
    qkv: &[T],
    rel: Option<&RelEmbeddings<'_, T>>,
) -> (Vec<T>, Vec<T>) {
    let l = g.span;
    let (dqk, dv) = (g.qk_dim, g.v_dim);
    let mut out = vec![T::zero(); g.batch * g.out_channels() * l];
    let mut weights = vec![T::zero(); g.batch * g.heads * l * l];
    let mut logits = vec![T::zero(); l];
    for b in 0..g.batch {
        for h in 0..g.heads {
            let hv = gather_head(g, qkv, b, h);
            let w_base = (b * g.heads + h) * l * l;
            for o in 0..l {
                let qo = &hv.q[o * dqk..(o + 1) * dqk];
                for p in 0..l {
                    let kp = &hv.k[p * dqk..(p + 1) * dqk];
                    let mut s = dot(qo, kp);
                    if let Some(r) = rel {
                        let idx = p + l - 1 - o;
                        s += dot(qo, &r.query[idx * dqk..(idx + 1) * dqk]);
                        s += dot(kp, &r.key[idx * dqk..(idx + 1) * dqk]);
                    }
                    logits[p] = s;
                }
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for s in logits.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let row = &mut weights[w_base + o * l..w_base + (o + 1) * l];
                for (w, &e) in row.iter_mut().zip(&logits) {
                    *w = e / total;
                }
                for c in 0..dv {
                    let mut acc = T::zero();
                    for p in 0..l {
                        let mut val = hv.v[p * dv + c];
                        if let Some(r) = rel {
                            val += r.value[(p + l - 1 - o) * dv + c];
                        }
                        acc += row[p] * val;
                    }
                    out[(b * g.out_channels() + h * dv + c) * l + o] = acc;
                }
            }
        }
    }
    (out, weights)
}

pub struct AttentionGrads<T> {
    pub qkv: Vec<T>,
    pub rel_query: Vec<T>,
    pub rel_key: Vec<T>,
    pub rel_value: Vec<T>,
}

pub fn attention_backward<T: Element>(
    g: &AttentionGeometry,
    qkv: &[T],
    rel: Option<&RelEmbeddings<'_, T>>,
    weights: &[T],
    grad_out: &[T],
) -> AttentionGrads<T> {
    let l = g.span;
    let (dqk, dv) = (g.qk_dim, g.v_dim);
    let rl = g.rel_len();
    let mut d_qkv = vec![T::zero(); qkv.len()];
    let mut d_rq = vec![T::zero(); rl * dqk];
    let mut d_rk = vec![T::zero(); rl * dqk];
    let mut d_rv = vec![T::zero(); rl * dv];
    let mut d_weight = vec![T::zero(); l];
    for b in 0..g.batch {
        for h in 0..g.heads {
            let hv = gather_head(g, qkv, b, h);
            let mut dq = vec![T::zero(); l * dqk];
            let mut dk = vec![T::zero(); l * dqk];
            let mut dvv = vec![T::zero(); l * dv];
            let w_base = (b * g.heads + h) * l * l;
            let out_base = (b * g.out_channels() + h * dv) * l;
            for o in 0..l {
                let row = &weights[w_base + o * l..w_base + (o + 1) * l];
                // dA(o,p) = Σ_c dout(c,o)·(v_p + rv[p−o])_c
                for p in 0..l {
                    let idx = p + l - 1 - o;
                    let mut acc = T::zero();
                    for c in 0..dv {
                        let go = grad_out[out_base + c * l + o];
                        let mut val = hv.v[p * dv + c];
                        if let Some(r) = rel {
                            val += r.value[idx * dv + c];
                            d_rv[idx * dv + c] += row[p] * go;
                        }
                        acc += go * val;
                        dvv[p * dv + c] += row[p] * go;
                    }
                    d_weight[p] = acc;
                }
                let mean = dot(row, &d_weight);
                let qo = &hv.q[o * dqk..(o + 1) * dqk];
                for p in 0..l {
                    let ds = row[p] * (d_weight[p] - mean);
                    let idx = p + l - 1 - o;
                    let kp = &hv.k[p * dqk..(p + 1) * dqk];
                    for c in 0..dqk {
                        let mut kq = kp[c];
                        let mut qk = qo[c];
                        if let Some(r) = rel {
                            kq += r.query[idx * dqk + c];
                            qk += r.key[idx * dqk + c];
                            d_rq[idx * dqk + c] += ds * qo[c];
                            d_rk[idx * dqk + c] += ds * kp[c];
                        }
                        dq[o * dqk + c] += ds * kq;
                        dk[p * dqk + c] += ds * qk;
                    }
                }
            }
            let base = (b * g.packed_channels() + h * (2 * dqk + dv)) * l;
            let mut scatter = |offset: usize, dim: usize, src: &[T]| {
                for c in 0..dim {
                    for pos in 0..l {
                        d_qkv[base + (offset + c) * l + pos] = src[pos * dim + c];
                    }
                }
            };
            scatter(0, dqk, &dq);
            scatter(dqk, dqk, &dk);
            scatter(2 * dqk, dv, &dvv);
        }
    }
    AttentionGrads {
        qkv: d_qkv,
        rel_query: d_rq,
        rel_key: d_rk,
        rel_value: d_rv,
    }
}
