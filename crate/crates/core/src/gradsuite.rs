//! The float64 finite-difference suite over every layer type, shared by
//! the `grad-check` command and the acceptance tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::axial::{AxialAttention1D, AxialConfig, AxialPairModule};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_report, grad_check_with_params, grad_check_with_params_where, GradCheckReport};
use crate::nn::{BatchNorm, Conv2d, Ctx, Linear, Mode, ParamStore};
use crate::quaternion::{QuaternionBank1x1, QuaternionConv2dLayer};
use crate::tensor::Tensor;
use crate::zoo::{BlockKind, BlockPlan, Bottleneck};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

pub const MODULES: [&str; 11] = [
    "conv",
    "bn",
    "relu",
    "softmax",
    "pool",
    "linear",
    "quat_conv",
    "quat_bank",
    "axial_1d",
    "axial_pair",
    "bottleneck",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub module: &'static str,
    pub case: String,
    pub report: GradCheckReport,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(randn(g.shape(y), seed));
    let p = g.mul(y, r)?;
    g.sum(p)
}

type OpFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn op_cases(module: &str) -> Vec<(String, OpFn, Vec<Vec<usize>>)> {
    let mut out: Vec<(String, OpFn, Vec<Vec<usize>>)> = Vec::new();
    let mut add = |name: &str, f: OpFn, shapes: Vec<Vec<usize>>| out.push((name.to_string(), f, shapes));
    match module {
        "conv" => {
            add(
                "3x3 pad 1",
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                    project(g, y, 1)
                },
                vec![vec![2, 3, 5, 5], vec![4, 3, 3, 3], vec![4]],
            );
            add(
                "3x3 stride 2",
                |g, v| {
                    let y = g.conv2d(v[0], v[1], None, 2, 0)?;
                    project(g, y, 2)
                },
                vec![vec![1, 2, 7, 6], vec![3, 2, 3, 3]],
            );
            add(
                "1x1",
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
                    project(g, y, 3)
                },
                vec![vec![3, 4, 2, 3], vec![5, 4, 1, 1], vec![5]],
            );
        }
        "bn" => {
            add(
                "train",
                |g, v| {
                    let (y, _, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                    project(g, y, 4)
                },
                vec![vec![3, 4, 2, 3], vec![4], vec![4]],
            );
            add(
                "eval",
                |g, v| {
                    let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0], 1e-5)?;
                    project(g, y, 5)
                },
                vec![vec![2, 3, 3, 2], vec![3], vec![3]],
            );
        }
        "relu" => {
            add(
                "relu",
                |g, v| {
                    let y = g.relu(v[0])?;
                    project(g, y, 6)
                },
                vec![vec![4, 5, 3]],
            );
        }
        "softmax" => {
            add(
                "axis 1",
                |g, v| {
                    let y = g.softmax(v[0], 1)?;
                    project(g, y, 7)
                },
                vec![vec![3, 5, 2]],
            );
            add(
                "cross entropy",
                |g, v| g.cross_entropy(v[0], &[0, 3, 1, 3]),
                vec![vec![4, 5]],
            );
        }
        "pool" => {
            add(
                "max 3/2",
                |g, v| {
                    let y = g.max_pool2d(v[0], 3, 2)?;
                    project(g, y, 8)
                },
                vec![vec![2, 2, 6, 5]],
            );
            add(
                "avg 2/2",
                |g, v| {
                    let y = g.avg_pool2d(v[0], 2, 2)?;
                    project(g, y, 9)
                },
                vec![vec![2, 3, 5, 5]],
            );
            add(
                "global avg",
                |g, v| {
                    let y = g.global_avg_pool(v[0])?;
                    project(g, y, 10)
                },
                vec![vec![2, 3, 4, 3]],
            );
        }
        "linear" => {
            add(
                "linear",
                |g, v| {
                    let y = g.linear(v[0], v[1], Some(v[2]))?;
                    project(g, y, 11)
                },
                vec![vec![4, 6], vec![3, 6], vec![3]],
            );
            add(
                "matmul",
                |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    project(g, y, 12)
                },
                vec![vec![3, 4], vec![4, 5]],
            );
        }
        _ => {}
    }
    out
}

fn check_ops(module: &'static str) -> Result<Vec<SuiteResult>> {
    op_cases(module)
        .into_iter()
        .map(|(case, f, shapes)| {
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| randn(s, 100 + i as u64))
                .collect();
            let report = grad_check_report(f, &inputs, 1e-5)?;
            Ok(SuiteResult { module, case, report })
        })
        .collect()
}

fn layer<F>(
    module: &'static str,
    case: &str,
    store: &ParamStore<f64>,
    x: Tensor<f64>,
    mode: Mode,
    f: F,
) -> Result<SuiteResult>
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
{
    let report = grad_check_with_params(
        |ctx, v| {
            let y = f(ctx, v[0])?;
            project(&mut ctx.graph, y, 200)
        },
        store,
        &[x],
        mode,
        1e-5,
    )?;
    Ok(SuiteResult {
        module,
        case: case.to_string(),
        report,
    })
}

/// Coordinates with identically zero gradient: a shift of the key
/// projection moves a whole softmax row; with a train-mode output norm, so
/// does a shift of the value projection.
fn structurally_live(layer: &AxialAttention1D, name: &str, coord: usize, train: bool) -> bool {
    if !name.ends_with("qkv_bn.beta") {
        return true;
    }
    let per_head = 2 * layer.qk_dim + layer.v_dim;
    let slot = coord % per_head;
    let is_key = (layer.qk_dim..2 * layer.qk_dim).contains(&slot);
    let is_value = slot >= 2 * layer.qk_dim;
    !(is_key || (is_value && train && layer.out_norm.is_some()))
}

/// Both directions of a pair, plus the height output shift that the
/// width qkv norm absorbs in train mode.
fn pair_live(pair: &AxialPairModule, name: &str, coord: usize, train: bool) -> bool {
    if train && name.ends_with("height.out_bn.beta") {
        return false;
    }
    let layer = if name.contains(".height.") {
        &pair.height
    } else {
        &pair.width
    };
    structurally_live(layer, name, coord, train)
}

fn check_layers(module: &'static str) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    match module {
        "conv" => {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "conv", 3, 4, 3, 2, 1, true, &mut rng(20))?;
            out.push(layer(
                module,
                "Conv2d layer",
                &store,
                randn(&[2, 3, 5, 5], 21),
                Mode::Train,
                |c, x| conv.forward(c, x),
            )?);
        }
        "bn" => {
            for mode in [Mode::Train, Mode::Eval] {
                let mut store = ParamStore::new();
                let bn = BatchNorm::new(&mut store, "bn", 3)?;
                let case = format!("BatchNorm layer, {mode:?}");
                out.push(layer(module, &case, &store, randn(&[3, 3, 2, 2], 22), mode, |c, x| {
                    bn.forward(c, x)
                })?);
            }
        }
        "linear" => {
            let mut store = ParamStore::new();
            let lin = Linear::new(&mut store, "fc", 5, 3, &mut rng(23))?;
            out.push(layer(
                module,
                "Linear layer",
                &store,
                randn(&[4, 5], 24),
                Mode::Train,
                |c, x| lin.forward(c, x),
            )?);
        }
        "quat_conv" => {
            for (cin, cout, k, stride, pad) in [(4, 8, 3, 1, 1), (8, 4, 1, 1, 0), (8, 8, 3, 2, 0)] {
                let mut store = ParamStore::new();
                let q = QuaternionConv2dLayer::new(&mut store, "q", cin, cout, k, stride, pad, &mut rng(25))?;
                let case = format!("{cin}->{cout} k{k} s{stride} p{pad}");
                out.push(layer(
                    module,
                    &case,
                    &store,
                    randn(&[2, cin, 5, 5], 26),
                    Mode::Train,
                    |c, x| q.forward(c, x),
                )?);
            }
        }
        "quat_bank" => {
            for m in [4, 8, 12] {
                let mut store = ParamStore::new();
                let bank = QuaternionBank1x1::new(&mut store, "bank", m, &mut rng(27))?;
                let case = format!("{m} channels");
                out.push(layer(
                    module,
                    &case,
                    &store,
                    randn(&[2, m, 3, 2], 28),
                    Mode::Train,
                    |c, x| bank.forward(c, x),
                )?);
            }
        }
        "axial_1d" => {
            let no_bn = AxialConfig {
                heads: 2,
                output_projection: true,
                batch_norm: false,
                ..AxialConfig::default()
            };
            let cases = [
                ("projection, no bn", no_bn, Mode::Train),
                (
                    "default, train",
                    AxialConfig {
                        heads: 2,
                        ..AxialConfig::default()
                    },
                    Mode::Train,
                ),
                (
                    "no positional, eval",
                    AxialConfig {
                        heads: 4,
                        positional: false,
                        ..AxialConfig::default()
                    },
                    Mode::Eval,
                ),
            ];
            for (case, config, mode) in cases {
                let mut store = ParamStore::new();
                let l = AxialAttention1D::new(&mut store, "attn", 8, 4, config, &mut rng(29))?;
                let train = mode == Mode::Train;
                let report = grad_check_with_params_where(
                    |ctx, v| {
                        let y = l.forward(ctx, v[0])?;
                        project(&mut ctx.graph, y, 201)
                    },
                    &store,
                    &[randn(&[3, 8, 4], 30)],
                    mode,
                    1e-6,
                    |name, j| structurally_live(&l, name, j, train),
                )?;
                out.push(SuiteResult {
                    module,
                    case: case.to_string(),
                    report,
                });
            }
        }
        "axial_pair" => {
            for stride in [1, 2] {
                let mut store = ParamStore::new();
                let config = AxialConfig {
                    heads: 2,
                    ..AxialConfig::default()
                };
                let p = AxialPairModule::new(&mut store, "pair", 8, 3, 4, stride, config, &mut rng(31))?;
                let report = grad_check_with_params_where(
                    |ctx, v| {
                        let y = p.forward(ctx, v[0])?;
                        project(&mut ctx.graph, y, 202)
                    },
                    &store,
                    &[randn(&[2, 8, 3, 4], 32)],
                    Mode::Train,
                    1e-6,
                    |name, j| pair_live(&p, name, j, true),
                )?;
                out.push(SuiteResult {
                    module,
                    case: format!("stride {stride}"),
                    report,
                });
            }
        }
        "bottleneck" => {
            for (kind, stride) in [
                (BlockKind::QuatAxial, 2),
                (BlockKind::QuatAxial, 1),
                (BlockKind::Conv, 2),
            ] {
                let mut store = ParamStore::new();
                let plan = BlockPlan {
                    kind,
                    quaternion_convs: false,
                    in_channels: 8,
                    mid_channels: 8,
                    out_channels: 16,
                    stride,
                    in_size: (4, 4),
                    axial: AxialConfig {
                        heads: 2,
                        ..AxialConfig::default()
                    },
                };
                let block = Bottleneck::new(&mut store, "block", plan, &mut rng(33))?;
                let pair = match &block.spatial {
                    crate::zoo::Spatial::Axial { pair, .. } => Some(pair.clone()),
                    crate::zoo::Spatial::Conv { .. } => None,
                };
                let report = grad_check_with_params_where(
                    |ctx, v| {
                        let y = block.forward(ctx, v[0])?;
                        project(&mut ctx.graph, y, 203)
                    },
                    &store,
                    &[randn(&[2, 8, 4, 4], 34)],
                    Mode::Train,
                    1e-6,
                    |name, j| pair.as_ref().is_none_or(|p| pair_live(p, name, j, true)),
                )?;
                out.push(SuiteResult {
                    module,
                    case: format!("{kind:?} stride {stride}"),
                    report,
                });
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Runs the cases of `module`, or of every module.
pub fn run(module: Option<&str>) -> Result<Vec<SuiteResult>> {
    let selected: Vec<&'static str> = match module {
        None => MODULES.to_vec(),
        Some(m) => vec![*MODULES
            .iter()
            .find(|&&k| k == m)
            .ok_or_else(|| Error::config(format!("unknown module `{m}`; expected one of {}", MODULES.join(", "))))?],
    };
    let mut out = Vec::new();
    for m in selected {
        out.extend(check_ops(m)?);
        out.extend(check_layers(m)?);
    }
    Ok(out)
}
