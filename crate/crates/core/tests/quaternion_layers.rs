use qaxnet::gradcheck::grad_check_with_params;
use qaxnet::nn::{Ctx, Mode, ParamStore};
use qaxnet::quaternion::{
    expand_to_quaternion_input, hamilton_matrix, hamilton_product, quaternion_init, Quaternion, QuaternionBank1x1,
    QuaternionConv2dLayer,
};
use qaxnet::{Error, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Left-multiplication matrix of `p`, written out by hand.
fn matrix_oracle(p: [f64; 4]) -> [[f64; 4]; 4] {
    let [r, i, j, k] = p;
    [[r, -i, -j, -k], [i, r, -k, j], [j, k, r, -i], [k, -j, i, r]]
}

fn apply(m: &[[f64; 4]; 4], q: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for a in 0..4 {
        out[a] = (0..4).map(|b| m[a][b] * q[b]).sum();
    }
    out
}

fn random_quat(r: &mut ChaCha8Rng) -> [f64; 4] {
    [(); 4].map(|_| r.random_range(-3.0..3.0))
}

#[test]
fn product_matches_matrix_oracle() {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (p, q) = (random_quat(&mut r), random_quat(&mut r));
        let got = hamilton_product(Quaternion::from_array(p), Quaternion::from_array(q)).to_array();
        let want = apply(&matrix_oracle(p), q);
        let via_table = apply(&hamilton_matrix(Quaternion::from_array(p)), q);
        for c in 0..4 {
            worst = worst.max((got[c] - want[c]).abs()).max((via_table[c] - want[c]).abs());
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn basis_products() {
    let (i, j, k) = (Quaternion::I, Quaternion::J, Quaternion::K);
    assert_eq!(i * j, k);
    assert_eq!(j * i, Quaternion::new(0.0, 0.0, 0.0, -1.0));
    assert_eq!(j * k, i);
    assert_eq!(k * i, j);
    assert_eq!(i * i, Quaternion::new(-1.0, 0.0, 0.0, 0.0));
    let q = Quaternion::new(0.3, -1.2, 2.5, 0.7);
    assert_eq!(Quaternion::IDENTITY * q, q);
    assert_eq!(q * Quaternion::IDENTITY, q);
    assert_ne!(q * i, i * q);
}

#[test]
fn matrix_of_i_squares_to_minus_identity() {
    let m = hamilton_matrix(Quaternion::I);
    for a in 0..4 {
        for b in 0..4 {
            let sq: f64 = (0..4).map(|c| m[a][c] * m[c][b]).sum();
            assert_eq!(sq, if a == b { -1.0 } else { 0.0 });
        }
    }
    assert_eq!(
        hamilton_matrix(Quaternion::IDENTITY),
        matrix_oracle([1.0, 0.0, 0.0, 0.0])
    );
}

/// `[qo, qi, kh, kw, 4]` → `[4qo, 4qi, kh, kw]` via the hand-written matrix.
fn expand_oracle(w: &Tensor<f64>) -> Tensor<f64> {
    let [qo, qi, kh, kw, _] = w.shape().try_into().unwrap();
    let mut out = vec![0.0; 16 * qo * qi * kh * kw];
    for o in 0..qo {
        for i in 0..qi {
            for y in 0..kh {
                for x in 0..kw {
                    let q = [0, 1, 2, 3].map(|c| w.at(&[o, i, y, x, c]));
                    let m = matrix_oracle(q);
                    for a in 0..4 {
                        for b in 0..4 {
                            out[(((4 * o + a) * 4 * qi + 4 * i + b) * kh + y) * kw + x] = m[a][b];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[4 * qo, 4 * qi, kh, kw], out).unwrap()
}

fn real_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv2d(xv, wv, None, stride, pad).unwrap();
    g.value(y).clone()
}

fn run<F>(store: &mut ParamStore<f64>, x: &Tensor<f64>, f: F) -> qaxnet::Result<Tensor<f64>>
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> qaxnet::Result<Var>,
{
    let mut ctx = Ctx::new(store, Mode::Train);
    let xv = ctx.input(x.clone());
    let y = f(&mut ctx, xv)?;
    Ok(ctx.graph.value(y).clone())
}

#[test]
fn quat_conv_matches_expanded_real_conv() {
    let mut r = rng(2);
    for case in 0..24u64 {
        let q_in = r.random_range(1..=3);
        let q_out = r.random_range(1..=3);
        let k = [1, 3][r.random_range(0..2)];
        let stride = r.random_range(1..=2);
        let pad = if k == 3 { r.random_range(0..=1) } else { 0 };
        let h = r.random_range(k..=7);
        let w = r.random_range(k..=7);
        let n = r.random_range(1..=2);
        let mut store = ParamStore::new();
        let layer = QuaternionConv2dLayer::new(
            &mut store,
            "q",
            4 * q_in,
            4 * q_out,
            k,
            stride,
            pad,
            &mut rng(100 + case),
        )
        .unwrap();
        let x = Tensor::<f64>::randn(&[n, 4 * q_in, h, w], 1.0, &mut r);
        let y = run(&mut store, &x, |ctx, v| layer.forward(ctx, v)).unwrap();
        let real = expand_oracle(&store.param(layer.weight).value);
        assert_eq!(layer.expanded_weight(&store).data(), real.data());
        let want = real_conv(&x, &real, stride, pad);
        assert_eq!(y.shape(), want.shape());
        let err = y.max_rel_diff(&want, 1e-6);
        assert!(err < 1e-6, "case {case}: {err}");
    }
}

#[test]
fn expanded_blocks_have_hamilton_structure() {
    let mut store = ParamStore::<f64>::new();
    let layer = QuaternionConv2dLayer::new(&mut store, "q", 12, 8, 3, 1, 1, &mut rng(3)).unwrap();
    let real = layer.expanded_weight(&store);
    for o in 0..2 {
        for i in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let block: Vec<f64> = (0..16)
                        .map(|e| real.at(&[4 * o + e / 4, 4 * i + e % 4, y, x]))
                        .collect();
                    let mut mags: Vec<u64> = block.iter().map(|v| v.abs().to_bits()).collect();
                    mags.sort_unstable();
                    mags.dedup();
                    assert!(mags.len() <= 4);
                    // first column is the quaternion itself; the rest follow the sign pattern
                    let q = [block[0], block[4], block[8], block[12]];
                    let m = matrix_oracle(q);
                    for e in 0..16 {
                        assert_eq!(block[e], m[e / 4][e % 4]);
                    }
                }
            }
        }
    }
}

#[test]
fn identity_kernel_is_identity_map() {
    let mut store = ParamStore::<f64>::new();
    let layer = QuaternionConv2dLayer::new(&mut store, "q", 4, 4, 1, 1, 0, &mut rng(4)).unwrap();
    store.param_mut(layer.weight).value = Tensor::new(&[1, 1, 1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let x = Tensor::<f64>::randn(&[2, 4, 3, 5], 1.0, &mut rng(5));
    let y = run(&mut store, &x, |ctx, v| layer.forward(ctx, v)).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn quat_conv_param_counts() {
    let mut store = ParamStore::<f32>::new();
    let a = QuaternionConv2dLayer::new(&mut store, "a", 128, 512, 1, 1, 0, &mut rng(6)).unwrap();
    assert_eq!(a.param_count(), 16384);
    assert_eq!(store.count_params(), 16384);
    let b = QuaternionConv2dLayer::new(&mut store, "b", 12, 20, 3, 1, 1, &mut rng(7)).unwrap();
    assert_eq!(b.param_count(), 4 * 5 * 3 * 9);
    assert_eq!(store.count_params(), 16384 + 540);
}

#[test]
fn quat_conv_rejects_wrong_channels() {
    let mut store = ParamStore::<f64>::new();
    let layer = QuaternionConv2dLayer::new(&mut store, "q", 8, 4, 1, 1, 0, &mut rng(8)).unwrap();
    let r = run(&mut store, &Tensor::zeros(&[1, 4, 2, 2]), |ctx, v| {
        layer.forward(ctx, v)
    });
    assert!(matches!(r, Err(Error::Dimension(_))));
    let bad = QuaternionConv2dLayer::new(&mut ParamStore::<f64>::new(), "q", 6, 4, 1, 1, 0, &mut rng(8));
    assert!(matches!(bad, Err(Error::Config(_))));
}

/// Per pixel, per group: the group's four channels times its 4×4 matrix.
fn bank_oracle(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let [n, m, h, wd] = x.shape().try_into().unwrap();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for g in 0..m / 4 {
            let mat = matrix_oracle([0, 1, 2, 3].map(|c| w.at(&[g, c])));
            for y in 0..h {
                for xx in 0..wd {
                    let v = [0, 1, 2, 3].map(|c| x.at(&[b, 4 * g + c, y, xx]));
                    let o = apply(&mat, v);
                    for c in 0..4 {
                        out[((b * m + 4 * g + c) * h + y) * wd + xx] = o[c];
                    }
                }
            }
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Block-diagonal real 1×1 weight of the bank.
fn bank_as_real_weight(w: &Tensor<f64>) -> Tensor<f64> {
    let groups = w.shape()[0];
    let m = 4 * groups;
    let mut out = vec![0.0; m * m];
    for g in 0..groups {
        let mat = matrix_oracle([0, 1, 2, 3].map(|c| w.at(&[g, c])));
        for a in 0..4 {
            for b in 0..4 {
                out[(4 * g + a) * m + 4 * g + b] = mat[a][b];
            }
        }
    }
    Tensor::new(&[m, m, 1, 1], out).unwrap()
}

#[test]
fn bank_matches_oracles() {
    let mut r = rng(9);
    for case in 0..24u64 {
        let m = 4 * r.random_range(1..=6);
        let (n, h, w) = (r.random_range(1..=3), r.random_range(1..=5), r.random_range(1..=5));
        let mut store = ParamStore::new();
        let bank = QuaternionBank1x1::new(&mut store, "bank", m, &mut rng(200 + case)).unwrap();
        let x = Tensor::<f64>::randn(&[n, m, h, w], 1.0, &mut r);
        let y = run(&mut store, &x, |ctx, v| bank.forward(ctx, v)).unwrap();
        let wt = &store.param(bank.weight).value;
        assert!(y.max_rel_diff(&bank_oracle(&x, wt), 1e-6) < 1e-12, "case {case}");
        assert!(
            y.max_rel_diff(&real_conv(&x, &bank_as_real_weight(wt), 1, 0), 1e-6) < 1e-6,
            "case {case}"
        );
    }
}

#[test]
fn bank_small_example() {
    let mut store = ParamStore::new();
    let bank = QuaternionBank1x1::new(&mut store, "bank", 8, &mut rng(10)).unwrap();
    let x = Tensor::<f64>::randn(&[1, 8, 2, 2], 1.0, &mut rng(11));
    let y = run(&mut store, &x, |ctx, v| bank.forward(ctx, v)).unwrap();
    let want = bank_oracle(&x, &store.param(bank.weight).value);
    assert!(y.max_abs_diff(&want) < 1e-14);
}

#[test]
fn bank_never_mixes_groups() {
    let m = 16;
    let mut store = ParamStore::new();
    let bank = QuaternionBank1x1::new(&mut store, "bank", m, &mut rng(12)).unwrap();
    let x = Tensor::<f64>::randn(&[2, m, 3, 3], 1.0, &mut rng(13));
    let y = run(&mut store, &x, |ctx, v| bank.forward(ctx, v)).unwrap();
    for g in 0..m / 4 {
        let mut xz = x.clone();
        for b in 0..2 {
            for c in 4 * g..4 * g + 4 {
                xz.data_mut()[(b * m + c) * 9..][..9].fill(0.0);
            }
        }
        let yz = run(&mut store, &xz, |ctx, v| bank.forward(ctx, v)).unwrap();
        for b in 0..2 {
            for c in 0..m {
                let got = &yz.data()[(b * m + c) * 9..][..9];
                if c / 4 == g {
                    assert!(got.iter().all(|&v| v == 0.0));
                } else {
                    let before = &y.data()[(b * m + c) * 9..][..9];
                    assert!(got.iter().zip(before).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
        }
    }
}

#[test]
fn bank_identity_and_counts() {
    let mut store = ParamStore::new();
    let bank = QuaternionBank1x1::new(&mut store, "bank", 64, &mut rng(14)).unwrap();
    assert_eq!(bank.groups(), 16);
    assert_eq!(bank.param_count(), 64);
    assert_eq!(store.count_params(), 64);
    let ident: Vec<f64> = (0..64).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    store.param_mut(bank.weight).value = Tensor::new(&[16, 4], ident).unwrap();
    let x = Tensor::<f64>::randn(&[1, 64, 2, 3], 1.0, &mut rng(15));
    let y = run(&mut store, &x, |ctx, v| bank.forward(ctx, v)).unwrap();
    assert_eq!(y.data(), x.data());
    let bad = QuaternionBank1x1::new(&mut ParamStore::<f64>::new(), "bank", 10, &mut rng(0));
    assert!(matches!(bad, Err(Error::Config(_))));
}

fn weighted_sum(ctx: &mut Ctx<'_, f64>, y: Var, seed: u64) -> qaxnet::Result<Var> {
    let shape = ctx.graph.shape(y).to_vec();
    let r = ctx.graph.constant(Tensor::randn(&shape, 1.0, &mut rng(seed)));
    let p = ctx.graph.mul(y, r)?;
    ctx.graph.sum(p)
}

#[test]
fn quat_conv_gradients() {
    for (cin, cout, k, stride, pad) in [(4, 8, 3, 1, 1), (8, 4, 1, 1, 0), (8, 8, 3, 2, 0)] {
        let mut store = ParamStore::new();
        let layer = QuaternionConv2dLayer::new(&mut store, "q", cin, cout, k, stride, pad, &mut rng(16)).unwrap();
        let x = Tensor::<f64>::randn(&[2, cin, 5, 5], 1.0, &mut rng(17));
        let report = grad_check_with_params(
            |ctx, v| {
                let y = layer.forward(ctx, v[0])?;
                weighted_sum(ctx, y, 18)
            },
            &store,
            &[x],
            Mode::Train,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn bank_gradients() {
    for m in [4, 8, 12] {
        let mut store = ParamStore::new();
        let bank = QuaternionBank1x1::new(&mut store, "bank", m, &mut rng(19)).unwrap();
        let x = Tensor::<f64>::randn(&[2, m, 3, 2], 1.0, &mut rng(20));
        let report = grad_check_with_params(
            |ctx, v| {
                let y = bank.forward(ctx, v[0])?;
                weighted_sum(ctx, y, 21)
            },
            &store,
            &[x],
            Mode::Train,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn shared_gradient_is_sum_over_placements() {
    let mut store = ParamStore::new();
    let layer = QuaternionConv2dLayer::new(&mut store, "q", 8, 4, 3, 1, 1, &mut rng(22)).unwrap();
    let x = Tensor::<f64>::randn(&[2, 8, 4, 4], 1.0, &mut rng(23));
    let quat_grad = {
        let mut ctx = Ctx::new(&mut store, Mode::Train);
        let xv = ctx.input(x.clone());
        let y = layer.forward(&mut ctx, xv).unwrap();
        let loss = weighted_sum(&mut ctx, y, 24).unwrap();
        ctx.backward(loss).unwrap().remove(0).1
    };
    let real = expand_oracle(&store.param(layer.weight).value);
    let real_grad = {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wv = g.input(real.clone());
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let r = g.constant(Tensor::randn(&[2, 4, 4, 4], 1.0, &mut rng(24)));
        let p = g.mul(y, r).unwrap();
        let loss = g.sum(p).unwrap();
        g.backward(loss).unwrap().wrt(wv).unwrap().clone()
    };
    // d/dw_c = Σ over the four placements of sign · d/dW_real
    for i in 0..2 {
        for t in 0..9 {
            let (y, x) = (t / 3, t % 3);
            for c in 0..4 {
                let mut unit = [0.0; 4];
                unit[c] = 1.0;
                let pattern = matrix_oracle(unit);
                let mut want = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        want += pattern[a][b] * real_grad.at(&[a, 4 * i + b, y, x]);
                    }
                }
                let got = quat_grad.at(&[0, i, y, x, c]);
                assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn init_is_deterministic() {
    let a = quaternion_init::<f64>(3, 2, 3, 3, 42).unwrap();
    let b = quaternion_init::<f64>(3, 2, 3, 3, 42).unwrap();
    let c = quaternion_init::<f64>(3, 2, 3, 3, 43).unwrap();
    assert_eq!(a.shape(), &[2, 3, 3, 3, 4]);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.data(), c.data());
}

#[test]
fn init_variance_matches_glorot() {
    let (q, target) = (16usize, 2.0 / (64.0 + 64.0));
    let mut samples = Vec::new();
    let mut seed = 0;
    while samples.len() < 10_000 {
        let w = quaternion_init::<f64>(q, q, 1, 1, seed).unwrap();
        samples.extend_from_slice(expand_oracle(&w).data());
        seed += 1;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    assert!((var - target).abs() / target < 0.1, "variance {var} vs {target}");
    let se = (var / n).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn quaternion_input_layout() {
    let rgb = Tensor::<f64>::randn(&[2, 3, 32, 32], 1.0, &mut rng(25));
    let q = expand_to_quaternion_input(&rgb).unwrap();
    assert_eq!(q.shape(), &[2, 4, 32, 32]);
    let plane = 32 * 32;
    for n in 0..2 {
        assert!(q.data()[n * 4 * plane..][..plane].iter().all(|&v| v == 0.0));
        assert_eq!(
            &q.data()[(n * 4 + 1) * plane..][..3 * plane],
            &rgb.data()[n * 3 * plane..][..3 * plane]
        );
    }
    assert!(matches!(
        expand_to_quaternion_input(&Tensor::<f64>::zeros(&[1, 4, 2, 2])),
        Err(Error::Dimension(_))
    ));
}
