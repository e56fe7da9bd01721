//! Central finite-difference verification of analytic gradients.
//!
//! Problems are posed over named blocks of `f64` variables with a scalar loss
//! and an analytic gradient. Relative error is `|a − n| / max(|a|, |n|, floor)`;
//! the floor keeps gradients that are numerically zero from dividing noise by
//! noise.

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::net::{ParamBuffers, PatchNet};
use crate::ops::{Layer, LayerSpec, Mode};
use crate::seed;
use crate::tensor::Tensor;
use crate::train::ecn_loss;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Check at most this many entries per block, sampled without replacement.
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            floor: DEFAULT_FLOOR,
            max_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub struct GradProblem<'a> {
    pub name: String,
    pub blocks: Vec<(String, Vec<f64>)>,
    pub loss: Box<dyn Fn(&[Vec<f64>]) -> f64 + 'a>,
    pub grad: Box<dyn Fn(&[Vec<f64>]) -> Vec<Vec<f64>> + 'a>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check(problem: GradProblem<'_>, opts: &GradCheckOptions) -> GradCheckReport {
    let GradProblem {
        name,
        blocks,
        loss,
        grad,
    } = problem;
    let values: Vec<Vec<f64>> = blocks.iter().map(|(_, v)| v.clone()).collect();
    let analytic = grad(&values);
    let mut vars = values;
    let mut rng = seed::rng(opts.seed);
    let mut report = GradCheckReport {
        name,
        max_rel_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        checked: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    for b in 0..vars.len() {
        let n = vars[b].len();
        let picks: Vec<usize> = match opts.max_per_block {
            Some(k) if k < n => {
                let mut v = index::sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in picks {
            let orig = vars[b][i];
            vars[b][i] = orig + opts.step;
            let up = loss(&vars);
            vars[b][i] = orig - opts.step;
            let down = loss(&vars);
            vars[b][i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic[b][i], numeric, opts.floor);
            report.checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_block = blocks[b].0.clone();
                report.worst_index = i;
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    report
}

/// Random projection loss `Σ r ⊙ layer(x)` over input, weight and bias.
pub fn layer_problem(spec: LayerSpec, input_shape: &[usize], seed_value: u64) -> Result<GradProblem<'static>> {
    let mut rng = seed::rng(seed_value);
    let mut layer = Layer::<f64>::new(spec.kind(), spec, input_shape, &mut rng)?;
    for t in [&mut layer.weight, &mut layer.bias].into_iter().flatten() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let n_in: usize = input_shape.iter().product();
    let out_len: usize = spec.output_shape(input_shape)?.iter().product();
    let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mode = Mode::Train {
        seed: seed::derive(seed_value, &[0xD0]),
    };

    let mut blocks = vec![("input".to_string(), x)];
    if let (Some(w), Some(b)) = (&layer.weight, &layer.bias) {
        blocks.push(("weight".to_string(), w.data().to_vec()));
        blocks.push(("bias".to_string(), b.data().to_vec()));
    }
    let shape = input_shape.to_vec();

    let rebuild = {
        let layer = layer.clone();
        move |vars: &[Vec<f64>]| {
            let mut l = layer.clone();
            if vars.len() == 3 {
                let ws = l.weight.as_ref().unwrap().shape().to_vec();
                let bs = l.bias.as_ref().unwrap().shape().to_vec();
                l.weight = Some(Tensor::new(&ws, vars[1].clone()).unwrap());
                l.bias = Some(Tensor::new(&bs, vars[2].clone()).unwrap());
            }
            l
        }
    };
    let rebuild2 = rebuild.clone();
    let (shape2, proj2) = (shape.clone(), proj.clone());

    let loss = move |vars: &[Vec<f64>]| {
        let l = rebuild(vars);
        let x = Tensor::new(&shape, vars[0].clone()).unwrap();
        let (y, _) = l.forward(&x, mode, 0).unwrap();
        y.data().iter().zip(&proj).map(|(a, b)| a * b).sum()
    };
    let grad = move |vars: &[Vec<f64>]| {
        let l = rebuild2(vars);
        let x = Tensor::new(&shape2, vars[0].clone()).unwrap();
        let (y, aux) = l.forward(&x, mode, 0).unwrap();
        let g = Tensor::new(y.shape(), proj2.clone()).unwrap();
        let mut gw = vec![0.0; l.weight.as_ref().map_or(0, Tensor::len)];
        let mut gb = vec![0.0; l.bias.as_ref().map_or(0, Tensor::len)];
        let has_params = l.weight.is_some();
        let gi = l
            .backward(
                &x,
                &y,
                &aux,
                &g,
                has_params.then_some((gw.as_mut_slice(), gb.as_mut_slice())),
                true,
            )
            .unwrap()
            .unwrap();
        let mut out = vec![gi.into_data()];
        if has_params {
            out.push(gw);
            out.push(gb);
        }
        out
    };
    Ok(GradProblem {
        name: format!("{} {:?}", spec.kind(), input_shape),
        blocks,
        loss: Box::new(loss),
        grad: Box::new(grad),
    })
}

/// Finite-difference check of a single layer kind on small random shapes.
pub fn check_layer(
    spec: LayerSpec,
    input_shape: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    Ok(grad_check(layer_problem(spec, input_shape, opts.seed)?, opts))
}

/// The per-kind suite: every layer type the network uses, on shapes small
/// enough to check exhaustively.
pub fn layer_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    use crate::ops::{LrnParams, PoolGeometry};
    let cases: Vec<(LayerSpec, Vec<usize>)> = vec![
        (LayerSpec::conv(3, 3), vec![2, 5, 5]),
        (LayerSpec::conv(2, 1), vec![3, 3, 3]),
        (LayerSpec::MaxPool(PoolGeometry::default()), vec![2, 6, 7]),
        (LayerSpec::Lrn(LrnParams::default()), vec![6, 3, 3]),
        (
            LayerSpec::Lrn(LrnParams {
                window: 3,
                alpha: 0.5,
                beta: 0.75,
                k: 2.0,
            }),
            vec![4, 2, 2],
        ),
        (LayerSpec::Relu, vec![3, 4, 4]),
        (LayerSpec::Fc { out_neurons: 5 }, vec![2, 3, 3]),
        (LayerSpec::Dropout { ratio: 0.5 }, vec![20]),
    ];
    cases
        .into_iter()
        .map(|(spec, shape)| check_layer(spec, &shape, opts))
        .collect()
}

fn param_blocks(net: &PatchNet<f64>) -> Vec<(String, Vec<f64>)> {
    net.params()
        .flat_map(|(name, w, b)| {
            [
                (format!("{name}.weight"), w.data().to_vec()),
                (format!("{name}.bias"), b.data().to_vec()),
            ]
        })
        .collect()
}

fn with_params(net: &PatchNet<f64>, vars: &[Vec<f64>]) -> PatchNet<f64> {
    let mut net = net.clone();
    for (i, (_, w, b)) in net.params_mut().enumerate() {
        w.data_mut().copy_from_slice(&vars[2 * i]);
        b.data_mut().copy_from_slice(&vars[2 * i + 1]);
    }
    net
}

fn random_patch(net: &PatchNet<f64>, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(&net.arch().input_shape(), |_| rng.random_range(-1.0..1.0))
}

/// Softmax cross-entropy of a whole network on one random patch, with dropout
/// active under a fixed mask. Variables are every weight and bias.
pub fn net_problem(profile: &str, num_classes: usize, seed_value: u64) -> Result<GradProblem<'static>> {
    ecn_problem_named(profile, num_classes, 1, seed_value, format!("{profile} network"))
}

/// Joint loss of `n` weight-sharing branches on distinct random patches:
/// cross-entropy of the softmax of the summed branch logits.
pub fn ecn_problem(profile: &str, num_classes: usize, n: usize, seed_value: u64) -> Result<GradProblem<'static>> {
    ecn_problem_named(profile, num_classes, n, seed_value, format!("{profile} ensemble N={n}"))
}

fn ecn_problem_named(
    profile: &str,
    num_classes: usize,
    n: usize,
    seed_value: u64,
    name: String,
) -> Result<GradProblem<'static>> {
    let net = PatchNet::<f64>::build(profile, num_classes, seed_value)?;
    let mut rng = seed::rng(seed::derive(seed_value, &[seed::hash_str("gradcheck")]));
    let patches: Vec<Tensor<f64>> = (0..n).map(|_| random_patch(&net, &mut rng)).collect();
    let label = rng.random_range(0..num_classes);
    let modes: Vec<Mode> = (0..n as u64)
        .map(|b| Mode::Train {
            seed: seed::derive(seed_value, &[0xD0, b]),
        })
        .collect();
    let blocks = param_blocks(&net);
    let (net2, patches2, modes2) = (net.clone(), patches.clone(), modes.clone());

    let loss = move |vars: &[Vec<f64>]| {
        let net = with_params(&net, vars);
        let z: Vec<Vec<f64>> = patches
            .iter()
            .zip(&modes)
            .map(|(p, m)| net.forward(p, *m).unwrap().logits().data().to_vec())
            .collect();
        ecn_loss(&z, label, n).unwrap().loss
    };
    let grad = move |vars: &[Vec<f64>]| {
        let net = with_params(&net2, vars);
        let traces: Vec<_> = patches2
            .iter()
            .zip(&modes2)
            .map(|(p, m)| net.forward(p, *m).unwrap())
            .collect();
        let z: Vec<&[f64]> = traces.iter().map(|t| t.logits().data()).collect();
        let joint = ecn_loss(&z, label, n).unwrap();
        let mut grads = ParamBuffers::zeros_like(&net);
        for t in &traces {
            net.backward(t, &joint.grad, &mut grads).unwrap();
        }
        grads.iter().flat_map(|(_, w, b)| [w.to_vec(), b.to_vec()]).collect()
    };
    Ok(GradProblem {
        name,
        blocks,
        loss: Box::new(loss),
        grad: Box::new(grad),
    })
}

/// Layer suite plus the composed mini network and a three-branch ensemble.
pub fn full_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut out = layer_suite(opts)?;
    out.push(grad_check(net_problem("mini", 3, opts.seed)?, opts));
    out.push(grad_check(ecn_problem("mini", 3, 3, opts.seed)?, opts));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_enough() {
        let problem = GradProblem {
            name: "x^2".into(),
            blocks: vec![("x".into(), vec![0.3, -1.7, 2.0])],
            loss: Box::new(|v: &[Vec<f64>]| v[0].iter().map(|x| x * x).sum()),
            grad: Box::new(|v: &[Vec<f64>]| vec![v[0].iter().map(|x| 2.0 * x).collect()]),
        };
        let r = grad_check(problem, &GradCheckOptions::default());
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_fails() {
        let problem = GradProblem {
            name: "bad".into(),
            blocks: vec![("x".into(), vec![1.0])],
            loss: Box::new(|v: &[Vec<f64>]| v[0][0].powi(3)),
            grad: Box::new(|v: &[Vec<f64>]| vec![vec![2.0 * v[0][0]]]),
        };
        assert!(!grad_check(problem, &GradCheckOptions::default()).passed);
    }

    #[test]
    fn mini_network_sampled() {
        let opts = GradCheckOptions {
            max_per_block: Some(4),
            seed: 5,
            ..GradCheckOptions::default()
        };
        let r = grad_check(net_problem("mini", 3, 5).unwrap(), &opts);
        assert!(r.passed, "{r:?}");
        let r = grad_check(ecn_problem("mini", 3, 2, 5).unwrap(), &opts);
        assert!(r.passed, "{r:?}");
    }
}
