//! Finite-difference checks of every differentiable op and of a small
//! composed AlexNet-mini loss, in f64.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{compare_gradients, compare_gradients_floored, BatchNormState, Mode, Tape, Var};
use crate::dim::l1_penalty;
use crate::encoders::{init_params, forward_with_taps, ArchitectureSpec, ForwardOptions, MiniWidths, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSED_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: usize = 20;
const H: f64 = 1e-5;
const H_COMPOSED: f64 = 1e-6;
/// Parameters feeding a train-mode batch norm have exactly zero gradient;
/// this keeps their rounding noise from counting as relative error.
const COMPOSED_FLOOR: f64 = 1e-5;

pub const SUITE: &[&str] = &[
    "elementwise",
    "linear",
    "conv3d",
    "maxpool3d",
    "batch_norm_train",
    "batch_norm_eval",
    "relu",
    "softplus",
    "dropout",
    "cross_entropy",
    "l1_penalty",
    "pair_scores",
    "jsd",
    "nce",
    "dv",
    "alexnet_mini",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub seeds: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

type Loss = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Autodiff vs central differences for `f` at `points`. With `fault` the
/// analytic gradient is deliberately perturbed.
fn check(f: &Loss, points: &[Tensor<f64>], h: f64, fault: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.variable(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    if fault {
        for g in &mut analytic {
            *g = g.map(|x| 1.1 * x + 1e-3);
        }
    }
    let value = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };
    compare_gradients(value, &analytic, points, h)
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output entry matters.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Random values at least `gap` apart, so max/relu choices are stable
/// under perturbation.
fn separated(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
    v.shuffle(rng);
    for x in &mut v {
        *x += rng.gen_range(-0.1..0.1) * gap;
    }
    Tensor::new(shape, v).expect("shape")
}

fn check_op(name: &str, seed: u64, fault: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "elementwise" => {
            let pts = [randn(&[3, 4], &mut rng), randn(&[3, 4], &mut rng)];
            let w = randn(&[3, 4], &mut rng);
            check(
                &move |t, v| {
                    let ab = t.mul(v[0], v[1])?;
                    let d = t.sub(ab, v[0])?;
                    let s = t.add(d, v[1])?;
                    let q = t.square(s)?;
                    let n = t.neg(q)?;
                    let sc = t.scale(n, 0.7)?;
                    let m = t.mean(sc)?;
                    let ws = weighted_sum(t, s, &w)?;
                    t.add(m, ws)
                },
                &pts,
                H,
                fault,
            )
        }
        "linear" => {
            let pts = [randn(&[2, 3], &mut rng), randn(&[4, 3], &mut rng), randn(&[4], &mut rng)];
            let w = randn(&[2, 4], &mut rng);
            check(&move |t, v| { let o = t.linear(v[0], v[1], v[2])?; weighted_sum(t, o, &w) }, &pts, H, fault)
        }
        "conv3d" => {
            let pts = [
                randn(&[2, 2, 5, 5, 5], &mut rng),
                randn(&[3, 2, 3, 3, 3], &mut rng),
                randn(&[3], &mut rng),
            ];
            let w = randn(&[2, 3, 3, 3, 3], &mut rng);
            check(&move |t, v| { let o = t.conv3d(v[0], v[1], v[2], 2, 1)?; weighted_sum(t, o, &w) }, &pts, H, fault)
        }
        "maxpool3d" => {
            let pts = [separated(&[1, 2, 5, 5, 5], 0.01, &mut rng)];
            let w = randn(&[1, 2, 2, 2, 2], &mut rng);
            check(&move |t, v| { let o = t.maxpool3d(v[0], 3, 2)?; weighted_sum(t, o, &w) }, &pts, H, fault)
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mode = if name.ends_with("train") { Mode::Train } else { Mode::Eval };
            let pts = [randn(&[4, 3, 2, 2, 2], &mut rng), randn(&[3], &mut rng), randn(&[3], &mut rng)];
            let w = randn(&[4, 3, 2, 2, 2], &mut rng);
            let mut state = BatchNormState::new(3);
            state.running_mean = randn(&[3], &mut rng).into_data();
            state.running_var = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
            check(
                &move |t, v| {
                    let mut st = state.clone();
                    let o = t.batch_norm(v[0], v[1], v[2], &mut st, mode)?;
                    weighted_sum(t, o, &w)
                },
                &pts,
                H,
                fault,
            )
        }
        "relu" => {
            let pts = [separated(&[24], 0.05, &mut rng)];
            let w = randn(&[24], &mut rng);
            check(&move |t, v| { let o = t.relu(v[0])?; weighted_sum(t, o, &w) }, &pts, H, fault)
        }
        "softplus" => {
            let pts = [Tensor::uniform(&[24], -6.0, 6.0, &mut rng)];
            let w = randn(&[24], &mut rng);
            check(&move |t, v| { let o = t.softplus(v[0])?; weighted_sum(t, o, &w) }, &pts, H, fault)
        }
        "dropout" => {
            let pts = [randn(&[40], &mut rng)];
            let w = randn(&[40], &mut rng);
            check(
                &move |t, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
                    let o = t.dropout(v[0], 0.3, Mode::Train, &mut mask_rng)?;
                    weighted_sum(t, o, &w)
                },
                &pts,
                H,
                fault,
            )
        }
        "cross_entropy" => {
            let pts = [Tensor::randn(&[5, 4], 2.0, &mut rng)];
            let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
            check(&move |t, v| t.cross_entropy(v[0], &labels), &pts, H, fault)
        }
        "l1_penalty" => {
            // parameters away from zero so |ω| is smooth at the point
            let pts = [separated(&[10], 0.1, &mut rng).map(|x| if x.abs() < 0.02 { 0.05 } else { x })];
            let lambda = rng.gen_range(0.1..2.0);
            let penalty = |p: &Tensor<f64>| -> Result<(Tape<f64>, Var, Var)> {
                let mut t = Tape::new();
                let w = t.param("w", p.clone());
                let l = l1_penalty(&mut t, lambda)?;
                Ok((t, w, l))
            };
            let (tape, w, l) = penalty(&pts[0])?;
            let mut g = tape.backward(l)?.get_or_zeros(w, pts[0].shape());
            if fault {
                g = g.map(|x| 1.1 * x + 1e-3);
            }
            compare_gradients(
                |p| {
                    let (t, _, l) = penalty(&p[0])?;
                    t.value(l).item()
                },
                &[g],
                &pts,
                H,
            )
        }
        "pair_scores" => {
            let pts = [randn(&[3, 4, 5], &mut rng), randn(&[3, 4], &mut rng)];
            let w = randn(&[3, 3, 5], &mut rng);
            check(&move |t, v| { let s = t.pair_scores(v[0], v[1])?; weighted_sum(t, s.scores, &w) }, &pts, H, fault)
        }
        "jsd" | "nce" => {
            let pts = [Tensor::randn(&[3, 3, 2], 2.0, &mut rng)];
            let nce = name == "nce";
            check(
                &move |t, v| {
                    let s = t.as_scores(v[0])?;
                    if nce { t.nce_objective(s) } else { t.jsd_objective(s) }
                },
                &pts,
                H,
                fault,
            )
        }
        "dv" => {
            let pts = [randn(&[6], &mut rng), Tensor::randn(&[10], 2.0, &mut rng)];
            check(&|t, v| t.dv_estimate(v[0], v[1]), &pts, H, fault)
        }
        "alexnet_mini" => composed_check(&mut rng, fault),
        other => Err(Error::invalid(format!("unknown gradient check `{other}`"))),
    }
}

/// Architecture of the composed check: AlexNet-mini with tiny widths.
pub fn composed_spec() -> Result<ArchitectureSpec> {
    ArchitectureSpec::alexnet_mini(
        16,
        MiniWidths {
            conv: [2, 3, 4, 4, 2],
            fc: 8,
        },
        4,
    )
}

/// Cross-entropy of a batch of 4 through train-mode AlexNet-mini, checked
/// for every parameter.
fn composed_check(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let spec = composed_spec()?;
    let base: ParamStore<f64> = init_params(&spec, rng);
    let input = randn(&[4, 1, 16, 16, 16], rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..4)).collect();
    let names: Vec<String> = base.iter().map(|(n, _)| n.to_string()).collect();

    let loss = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Var)> {
        let mut store = base.clone();
        for (n, v) in names.iter().zip(values) {
            *store.get_mut(n).expect("known name") = v.clone();
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let out = forward_with_taps(&spec, &mut store, &mut tape, x, ForwardOptions::train())?;
        let l = tape.cross_entropy(out.output, &labels)?;
        Ok((tape, l))
    };
    let points: Vec<Tensor<f64>> = base.iter().map(|(_, t)| t.clone()).collect();
    let (tape, l) = loss(&points)?;
    let grads = tape.backward(l)?;
    let analytic: Vec<Tensor<f64>> = names
        .iter()
        .zip(&points)
        .map(|(n, p)| {
            let g = grads.param(n, &tape).unwrap_or_else(|| Tensor::zeros(p.shape()));
            if fault { g.map(|x| 1.1 * x + 1e-3) } else { g }
        })
        .collect();
    compare_gradients_floored(
        |pts| {
            let (t, l) = loss(pts)?;
            t.value(l).item()
        },
        &analytic,
        &points,
        H_COMPOSED,
        COMPOSED_FLOOR,
    )
}

/// Runs the named checks over `seeds` seeds each. `fault` names a check
/// whose analytic gradient is corrupted, as a negative control.
pub fn run_suite(names: &[&str], seeds: usize, fault: Option<&str>) -> Result<Vec<OpReport>> {
    if names.is_empty() {
        return Err(Error::invalid("empty gradient-check selection"));
    }
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    if let Some(bad) = names.iter().find(|n| !SUITE.contains(n)) {
        return Err(Error::invalid(format!("unknown gradient check `{bad}`")));
    }
    names
        .iter()
        .map(|&name| {
            let mut worst = 0.0f64;
            for seed in 0..seeds as u64 {
                worst = worst.max(check_op(name, seed, fault == Some(name))?);
            }
            Ok(OpReport {
                name: name.to_string(),
                max_rel_error: worst,
                tolerance: if name == "alexnet_mini" { COMPOSED_TOLERANCE } else { OP_TOLERANCE },
                seeds,
            })
        })
        .collect()
}

