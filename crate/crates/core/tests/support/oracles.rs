//! Gradient-check catalog shared by the integration and acceptance tests.
#![allow(dead_code)]

use invlab_core::autodiff::{gradcheck, Activation, Tape, Tensor, Var};
use invlab_core::defense::{ca_loss, ce_loss, hsic, ls_loss, mid_kl};
use invlab_core::nn::{build_classifier, HeadConfig, ModelConfig};
use invlab_core::seed::splitmix64;
use invlab_core::Result;

type Case = fn(&mut Tape<f64>, Var) -> Result<Var>;

pub struct OpCase {
    pub name: &'static str,
    pub shape: [usize; 2],
    /// Probe values drawn from (0.2, 2) instead of (-2, 2).
    pub positive: bool,
    pub f: Case,
}

/// Uniform values from a splitmix stream.
pub fn probe(seed: u64, shape: [usize; 2], positive: bool) -> Tensor<f64> {
    let mut s = seed;
    let values = (0..shape[0] * shape[1])
        .map(|_| {
            s = splitmix64(s);
            let u = (s >> 11) as f64 / (1u64 << 53) as f64;
            if positive {
                0.2 + 1.8 * u
            } else {
                4.0 * u - 2.0
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn fixed(t: &mut Tape<f64>, shape: [usize; 2], salt: u64) -> Var {
    let p = probe(0xC0FFEE ^ salt, shape, false);
    t.constant(shape.to_vec(), p.values().to_vec()).unwrap()
}

/// Scalar reduction with uneven weights so symmetric errors do not cancel.
fn reduce(t: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = t.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.7 * ((i + 1) as f64).sin()).collect();
    let w = t.constant(shape, w)?;
    let m = t.mul(v, w)?;
    Ok(t.sum(m))
}

const LABELS: [usize; 4] = [0, 2, 1, 2];

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul-left",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let b = fixed(t, [3, 2], 1);
                let y = t.matmul(x, b)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "matmul-right",
            shape: [3, 2],
            positive: false,
            f: |t, x| {
                let a = fixed(t, [4, 3], 2);
                let y = t.matmul(a, x)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "add_bias-matrix",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let b = fixed(t, [1, 3], 3);
                let y = t.add_bias(x, b)?;
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "add_bias-bias",
            shape: [1, 3],
            positive: false,
            f: |t, x| {
                let a = fixed(t, [4, 3], 4);
                let y = t.add_bias(a, x)?;
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "add",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let c = fixed(t, [3, 3], 5);
                let y = t.add(x, c)?;
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "sub",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let c = fixed(t, [3, 3], 6);
                let y = t.sub(c, x)?;
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "mul",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let c = fixed(t, [3, 3], 7);
                let y = t.mul(x, c)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "mul-fanout",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.mul(x, x)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "scale",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.scale(x, -1.7);
                let y = t.mul(y, x)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "add_scalar",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.add_scalar(x, 0.4);
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "identity",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.activate(x, Activation::Identity);
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "relu",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.activate(x, Activation::Relu);
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "sigmoid",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.activate(x, Activation::Sigmoid);
                reduce(t, y)
            },
        },
        OpCase {
            name: "tanh",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.activate(x, Activation::Tanh);
                reduce(t, y)
            },
        },
        OpCase {
            name: "exp",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.exp(x);
                reduce(t, y)
            },
        },
        OpCase {
            name: "log",
            shape: [3, 3],
            positive: true,
            f: |t, x| {
                let y = t.log(x);
                reduce(t, y)
            },
        },
        OpCase {
            name: "powf",
            shape: [3, 3],
            positive: true,
            f: |t, x| {
                let y = t.powf(x, 2.5);
                reduce(t, y)
            },
        },
        OpCase {
            name: "softplus",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.softplus(x);
                reduce(t, y)
            },
        },
        OpCase {
            name: "clamp_min",
            shape: [3, 3],
            positive: true,
            f: |t, x| {
                let y = t.clamp_min(x, 0.1);
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "log_softmax",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let y = t.log_softmax(x);
                reduce(t, y)
            },
        },
        OpCase {
            name: "gather",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let y = t.mul(x, x)?;
                let y = t.gather(y, &LABELS)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "sum",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.mul(x, x)?;
                Ok(t.sum(y))
            },
        },
        OpCase {
            name: "mean",
            shape: [3, 3],
            positive: false,
            f: |t, x| {
                let y = t.mul(x, x)?;
                Ok(t.mean(y))
            },
        },
        OpCase {
            name: "slice_cols",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let y = t.slice_cols(x, 1, 3)?;
                let y = t.mul(y, y)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "transpose",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let y = t.transpose(x);
                let c = fixed(t, [3, 4], 8);
                let y = t.mul(y, c)?;
                reduce(t, y)
            },
        },
        OpCase {
            name: "sq_dist",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let y = t.sq_dist(x);
                reduce(t, y)
            },
        },
        OpCase {
            name: "ce_loss",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let lp = t.log_softmax(x);
                ce_loss(t, lp, &LABELS)
            },
        },
        OpCase {
            name: "ca_loss",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let lp = t.log_softmax(x);
                let p = t.exp(lp);
                Ok(ca_loss(t, p, &LABELS, 1.0, 8.0)?.loss)
            },
        },
        OpCase {
            name: "ls_loss",
            shape: [4, 3],
            positive: false,
            f: |t, x| {
                let lp = t.log_softmax(x);
                ls_loss(t, lp, &LABELS, -0.3)
            },
        },
        OpCase {
            name: "mid_kl",
            shape: [4, 6],
            positive: false,
            f: |t, x| {
                let mu = t.slice_cols(x, 0, 3)?;
                let rho = t.slice_cols(x, 3, 6)?;
                let s = t.softplus(rho);
                mid_kl(t, mu, s)
            },
        },
        OpCase {
            name: "hsic",
            shape: [6, 2],
            positive: false,
            f: |t, x| {
                let z = fixed(t, [6, 3], 9);
                let m = fixed(t, [2, 3], 10);
                let h = t.matmul(x, m)?;
                let h = t.add(h, z)?;
                hsic(t, x, h, Some(1.5))
            },
        },
    ]
}

fn toy(head: HeadConfig) -> invlab_core::Classifier {
    build_classifier(&ModelConfig::toy(head, 11)).unwrap()
}

fn none_like<R>(_: &R) -> Option<&mut R> {
    None
}

fn network_loss(t: &mut Tape<f64>, x: Var, head: HeadConfig) -> Result<Var> {
    let model = toy(head);
    let bound = model.bind_frozen(t);
    let r = invlab_core::seed::rng(0);
    let fwd = model.record(t, &bound, x, none_like(&r))?;
    let lp = t.log_softmax(fwd.logits);
    ce_loss(t, lp, &LABELS)
}

/// The toy network's loss differentiated through every layer, with respect
/// to the input and to the first-layer weight.
pub fn network_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "toy-net-input-standard",
            shape: [4, 2],
            positive: false,
            f: |t, x| network_loss(t, x, HeadConfig::Standard),
        },
        OpCase {
            name: "toy-net-input-lowrank-tanh",
            shape: [4, 2],
            positive: false,
            f: |t, x| network_loss(t, x, HeadConfig::low_rank_tanh(2)),
        },
        OpCase {
            name: "toy-net-first-weight",
            shape: [2, 20],
            positive: false,
            f: |t, w| {
                let model = toy(HeadConfig::low_rank_tanh(2));
                let x = fixed(t, [4, 2], 12);
                let b0 = t.constant(vec![1, 20], model.encoder[0].bias.values().to_vec())?;
                let mut h = model.encoder[0].record(t, (w, b0), x)?;
                for layer in &model.encoder[1..] {
                    let wv = t.constant(layer.weight.shape().to_vec(), layer.weight.values().to_vec())?;
                    let bv = t.constant(layer.bias.shape().to_vec(), layer.bias.values().to_vec())?;
                    h = layer.record(t, (wv, bv), h)?;
                }
                let rest = model.bind_frozen(t);
                let head_vars = &rest.vars()[2 * model.encoder.len()..];
                let logits = match &model.head {
                    invlab_core::nn::Head::LowRank { compress, classify } => {
                        let z = compress.record(t, (head_vars[0], head_vars[1]), h)?;
                        classify.record(t, (head_vars[2], head_vars[3]), z)?
                    }
                    _ => unreachable!("low-rank head requested"),
                };
                let lp = t.log_softmax(logits);
                ce_loss(t, lp, &LABELS)
            },
        },
    ]
}

/// Worst relative gradcheck error of `case` over `probes` seeded probes.
pub fn worst_error(case: &OpCase, probes: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..probes {
        let p = probe(
            k.wrapping_mul(0x9E37) ^ case.name.len() as u64,
            case.shape,
            case.positive,
        );
        worst = worst.max(gradcheck(case.f, &p)?);
    }
    Ok(worst)
}
