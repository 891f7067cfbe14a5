//! Finite-difference verification suites for the neural operators and for a
//! full contextual U-Net, run in double precision.
//!
//! Inputs are random and small (spatial extent at most 8). Draws that put a
//! SeLU input or a max-pool runner-up within [`KINK_MARGIN`] of a
//! non-differentiable point are rejected and redrawn, since a central
//! difference straddling a kink does not estimate the derivative.

use crate::autodiff::{check_gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::hourglass::{build_contextual_unet, Head, HourglassConfig, Network};
use crate::ops::LabelMap;
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub const EPSILON: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 64;

/// Every differentiable operator the suite covers, in report order.
pub const NN_OPS: [&str; 9] = [
    "conv2d_same",
    "transposed_conv2d",
    "maxpool2",
    "selu",
    "context_gather",
    "contextual_conv",
    "concat_channels",
    "softmax_cross_entropy",
    "mse_loss",
];

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
    /// Random draws consumed before one cleared the kink margin.
    pub draws: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

type Builder = fn(&mut Tape<f64>, &[Var], &LabelMap) -> Result<Var>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Shape>,
    labels: Option<(usize, usize, usize, u32)>,
    build: Builder,
}

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape { n, c, h, w }
}

// Weighted sum of `y` against a fixed pseudo-random tensor so every output
// element carries a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.value(y).shape();
    let mut rng = RngState::new(0x5eed).substream("projection");
    let r = tape.leaf(Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0)));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv2d_same",
            inputs: vec![s(2, 2, 5, 6), s(3, 2, 3, 3), s(1, 3, 1, 1)],
            labels: None,
            build: |t, v, _| {
                let y = t.conv2d_same(v[0], v[1], v[2])?;
                project(t, y)
            },
        },
        OpCase {
            name: "transposed_conv2d",
            inputs: vec![s(2, 3, 3, 4), s(2, 3, 2, 2), s(1, 2, 1, 1)],
            labels: None,
            build: |t, v, _| {
                let y = t.transposed_conv2d(v[0], v[1], v[2], 2)?;
                project(t, y)
            },
        },
        OpCase {
            name: "maxpool2",
            inputs: vec![s(2, 2, 8, 6)],
            labels: None,
            build: |t, v, _| {
                let y = t.maxpool2(v[0])?;
                project(t, y)
            },
        },
        OpCase {
            name: "selu",
            inputs: vec![s(1, 3, 4, 4)],
            labels: None,
            build: |t, v, _| {
                let y = t.selu(v[0]);
                project(t, y)
            },
        },
        OpCase {
            name: "context_gather",
            inputs: vec![s(2, 2, 3, 2)],
            labels: None,
            build: |t, v, _| {
                let y = t.context_gather(v[0], 7, 5)?;
                project(t, y)
            },
        },
        OpCase {
            name: "contextual_conv",
            inputs: vec![s(2, 3, 4, 4), s(2, 2, 8, 8), s(2, 3, 3, 3), s(1, 2, 1, 1), s(2, 2, 3, 3), s(1, 2, 1, 1)],
            labels: None,
            build: |t, v, _| {
                let small = crate::ops::BankVars { weight: v[2], bias: v[3] };
                let large = crate::ops::BankVars { weight: v[4], bias: v[5] };
                let y = t.contextual_conv(v[0], v[1], small, large)?;
                project(t, y)
            },
        },
        OpCase {
            name: "concat_channels",
            inputs: vec![s(2, 2, 3, 3), s(2, 3, 3, 3)],
            labels: None,
            build: |t, v, _| {
                let y = t.concat_channels(v[0], v[1])?;
                project(t, y)
            },
        },
        OpCase {
            name: "softmax_cross_entropy",
            inputs: vec![s(2, 3, 4, 5)],
            labels: Some((2, 4, 5, 3)),
            build: |t, v, labels| t.softmax_cross_entropy(v[0], labels),
        },
        OpCase {
            name: "mse_loss",
            inputs: vec![s(2, 2, 4, 4), s(2, 2, 4, 4)],
            labels: None,
            build: |t, v, _| t.mse_loss(v[0], v[1]),
        },
    ]
}

fn random_tensor(shape: Shape, rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

fn margin_of(build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut tape = Tape::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    build(&mut tape, &vars)?;
    Ok(tape.min_kink_margin().unwrap_or(f64::INFINITY))
}

/// Wraps `f` so the gradient flowing back out of it is scaled by 1.5: a
/// deliberately wrong backward rule used to prove the suite detects faults.
fn corrupted(f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {
    move |tape, vars| {
        let y = f(tape, vars)?;
        let value = tape.value(y).clone();
        Ok(tape.custom("corrupted", value, &[y], |g, _| vec![Some(g.scale(1.5))]))
    }
}

/// Checks every operator in [`NN_OPS`]. `corrupt` names an operator whose
/// backward rule is deliberately broken.
pub fn op_suite(seed: u64, corrupt: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(name) = corrupt {
        if !NN_OPS.contains(&name) {
            return Err(Error::config(format!("unknown operator {name}")));
        }
    }
    let root = RngState::new(seed).substream("gradcheck-ops");
    let mut results = Vec::new();
    for case in cases() {
        let mut rng = root.substream(case.name);
        let mut draws = 0;
        let (inputs, labels) = loop {
            draws += 1;
            let inputs: Vec<Tensor<f64>> = case.inputs.iter().map(|&sh| random_tensor(sh, &mut rng)).collect();
            let labels = match case.labels {
                Some((n, h, w, classes)) => {
                    LabelMap::new(n, h, w, (0..n * h * w).map(|_| rng.below(classes as usize) as u32).collect())?
                }
                None => LabelMap::new(1, 1, 1, vec![0])?,
            };
            let margin = margin_of(|t, v| (case.build)(t, v, &labels), &inputs)?;
            if margin >= KINK_MARGIN || draws == MAX_DRAWS {
                break (inputs, labels);
            }
        };
        let wrt: Vec<usize> = (0..inputs.len()).collect();
        let build = |t: &mut Tape<f64>, v: &[Var]| (case.build)(t, v, &labels);
        let reports = if corrupt == Some(case.name) {
            check_gradients(corrupted(build), &inputs, &wrt, EPSILON)?
        } else {
            check_gradients(build, &inputs, &wrt, EPSILON)?
        };
        let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, nan_max);
        results.push(CheckResult { name: case.name.to_owned(), max_relative_error: worst, draws });
    }
    Ok(results)
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Topology of the network-level check: depth-2 contextual U-Net, base 2,
/// on 8×8 inputs.
pub fn network_config(head: Head) -> HourglassConfig {
    let out = if head == Head::SoftmaxSegmentation { 2 } else { 1 };
    HourglassConfig::new(2, 2, 1, out, head)
}

fn network_loss<'a>(
    net: &'a Network<f64>,
    head: Head,
    target: &Tensor<f64>,
    labels: &LabelMap,
) -> impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a {
    let target = target.clone();
    let labels = labels.clone();
    move |tape, vars| {
        let out = net.forward(tape, &vars[1..], vars[0])?;
        match head {
            Head::SoftmaxSegmentation => tape.softmax_cross_entropy(out, &labels),
            Head::LinearDensity => {
                let t = tape.leaf(target.clone());
                tape.mse_loss(out, t)
            }
        }
    }
}

/// Checks the loss gradient of a full contextual U-Net with respect to every
/// parameter tensor (and the input image). One result per tensor.
pub fn network_suite(seed: u64, head: Head) -> Result<Vec<CheckResult>> {
    let config = network_config(head);
    let root = RngState::new(seed).substream("gradcheck-network");
    let shape = s(1, 1, 8, 8);
    let mut draws = 0;
    loop {
        draws += 1;
        let draw = root.substream(&format!("draw{draws}"));
        let net: Network<f64> = build_contextual_unet(&config, &draw)?;
        let mut rng = draw.substream("data");
        let x = Tensor::from_fn(shape, |_, _, _, _| rng.uniform());
        let target = Tensor::from_fn(shape, |_, _, _, _| rng.uniform());
        let labels = LabelMap::new(1, 8, 8, (0..64).map(|_| rng.below(2) as u32).collect())?;
        let mut inputs = vec![x];
        inputs.extend(net.params().iter().map(|p| p.value.clone()));
        let loss = network_loss(&net, head, &target, &labels);
        let margin = margin_of(&loss, &inputs)?;
        if margin < KINK_MARGIN && draws < MAX_DRAWS {
            continue;
        }
        let wrt: Vec<usize> = (0..inputs.len()).collect();
        let reports = check_gradients(&loss, &inputs, &wrt, EPSILON)?;
        let names = std::iter::once("input".to_owned()).chain(net.params().iter().map(|p| p.name.clone()));
        return Ok(names
            .zip(reports)
            .map(|(name, r)| CheckResult { name, max_relative_error: r.max_relative_error, draws })
            .collect());
    }
}
