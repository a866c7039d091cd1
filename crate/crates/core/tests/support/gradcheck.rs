//! Finite-difference gradient oracle.
//!
//! The reference forward pass below is an independent f64 re-implementation
//! of the layer math, evaluated directly from the network's parameter
//! arrays. Central differences on it are compared against the analytic f32
//! gradients from `Network::backward`.

use jdebate::neural::loss::softmax_cross_entropy;
use jdebate::neural::network::{Activation, LayerSpec, Network, BN_EPS};
use jdebate::neural::Matrix;
use jdebate::rng::DetRng;
use rand::Rng;

pub const FD_EPS: f64 = 1e-3;
/// Denominator floor for the relative error, so gradients that are
/// numerically zero (f32 round-off, ~1e-7) are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Linear,
    LeakyRelu,
    Prelu,
    BatchNormTrain,
    Softmax,
    SoftmaxCrossEntropy,
}

pub const ALL_KINDS: [Kind; 6] = [
    Kind::Linear,
    Kind::LeakyRelu,
    Kind::Prelu,
    Kind::BatchNormTrain,
    Kind::Softmax,
    Kind::SoftmaxCrossEntropy,
];

#[derive(Clone)]
struct RefLayer {
    act: Activation,
    bn: bool,
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    slope: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
}

fn to_ref(net: &Network) -> Vec<RefLayer> {
    net.layers()
        .iter()
        .map(|l| RefLayer {
            act: l.spec.activation,
            bn: l.spec.batch_norm,
            in_dim: l.spec.in_dim,
            out_dim: l.spec.out_dim,
            w: l.weight.data().iter().map(|v| *v as f64).collect(),
            b: l.bias.iter().map(|v| *v as f64).collect(),
            slope: l.slope.iter().map(|v| *v as f64).collect(),
            gamma: l.bn.as_ref().map_or(vec![], |b| b.gamma.iter().map(|v| *v as f64).collect()),
            beta: l.bn.as_ref().map_or(vec![], |b| b.beta.iter().map(|v| *v as f64).collect()),
        })
        .collect()
}

/// Returns the output rows and the sign pattern of every kinked pre-activation.
fn ref_forward(layers: &[RefLayer], x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = x.len();
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let mut pattern = Vec::new();
    for l in layers {
        let mut z = vec![vec![0.0; l.out_dim]; n];
        for r in 0..n {
            for j in 0..l.out_dim {
                let mut s = l.b[j];
                for i in 0..l.in_dim {
                    s += h[r][i] * l.w[i * l.out_dim + j];
                }
                z[r][j] = s;
            }
        }
        if l.bn {
            for j in 0..l.out_dim {
                let mean = z.iter().map(|row| row[j]).sum::<f64>() / n as f64;
                let var = z.iter().map(|row| (row[j] - mean).powi(2)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + BN_EPS as f64).sqrt();
                for row in z.iter_mut() {
                    row[j] = l.gamma[j] * (row[j] - mean) * inv + l.beta[j];
                }
            }
        }
        for row in z.iter_mut() {
            match l.act {
                Activation::Identity => {}
                Activation::LeakyRelu { slope } => {
                    for v in row.iter_mut() {
                        pattern.push(*v > 0.0);
                        if *v <= 0.0 {
                            *v *= slope as f64;
                        }
                    }
                }
                Activation::Prelu => {
                    for (j, v) in row.iter_mut().enumerate() {
                        pattern.push(*v > 0.0);
                        if *v <= 0.0 {
                            *v *= l.slope[j];
                        }
                    }
                }
                Activation::Softmax => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp() / s;
                    }
                }
            }
        }
        h = z;
    }
    (h, pattern)
}

enum Objective {
    Projection(Vec<Vec<f64>>),
    CrossEntropy(Vec<usize>),
}

fn objective_value(obj: &Objective, y: &[Vec<f64>]) -> f64 {
    match obj {
        Objective::Projection(c) => y
            .iter()
            .zip(c)
            .map(|(yr, cr)| yr.iter().zip(cr).map(|(a, b)| a * b).sum::<f64>())
            .sum(),
        Objective::CrossEntropy(t) => {
            let n = y.len() as f64;
            y.iter()
                .zip(t)
                .map(|(row, &k)| {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
                    lse - row[k]
                })
                .sum::<f64>()
                / n
        }
    }
}

fn specs_for(kind: Kind, dim: usize) -> Vec<LayerSpec> {
    let act = match kind {
        Kind::Linear | Kind::SoftmaxCrossEntropy => Activation::Identity,
        Kind::LeakyRelu => Activation::LeakyRelu { slope: 1e-2 },
        Kind::Prelu => Activation::Prelu,
        Kind::BatchNormTrain => Activation::Identity,
        Kind::Softmax => Activation::Softmax,
    };
    let mut s = LayerSpec::new(dim, dim, act);
    if matches!(kind, Kind::BatchNormTrain) {
        s = s.with_batch_norm();
    }
    vec![s]
}

/// Max relative error between analytic and finite-difference gradients for
/// one random `dim × dim` instance with a batch of `dim` rows. Coordinates
/// whose ±ε perturbation crosses an activation kink are skipped.
pub fn check_instance(kind: Kind, dim: usize, rng: &mut DetRng) -> f64 {
    let specs = specs_for(kind, dim);
    let mut net = Network::new(&specs, rng).unwrap();
    // Randomize the non-weight parameters so every path is exercised.
    for layer in net.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        for a in layer.slope.iter_mut() {
            *a = rng.random_range(0.05..0.5);
        }
        if let Some(bn) = layer.bn.as_mut() {
            for g in bn.gamma.iter_mut() {
                *g = rng.random_range(0.5..1.5);
            }
            for b in bn.beta.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
    }
    let x_rows: Vec<Vec<f32>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect())
        .collect();
    let x = Matrix::from_rows(&x_rows).unwrap();
    let x64: Vec<Vec<f64>> = x_rows
        .iter()
        .map(|r| r.iter().map(|v| *v as f64).collect())
        .collect();
    let out_dim = net.out_dim();

    let (y, cache) = net.clone().forward_train(&x).unwrap();
    let (objective, grad_out) = match kind {
        Kind::SoftmaxCrossEntropy => {
            let t: Vec<usize> = (0..dim).map(|_| rng.random_range(0..out_dim)).collect();
            let (_, g) = softmax_cross_entropy(&y, &t).unwrap();
            (Objective::CrossEntropy(t), g)
        }
        _ => {
            let c: Vec<Vec<f32>> = (0..dim)
                .map(|_| (0..out_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
                .collect();
            let c64 = c.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
            (Objective::Projection(c64), Matrix::from_rows(&c).unwrap())
        }
    };
    let (grads, dx) = net.backward(&cache, &grad_out).unwrap();

    let base = to_ref(&net);
    let (_, base_pattern) = ref_forward(&base, &x64);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    let mut skipped = 0usize;
    let mut compare = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_pattern || minus.1 != base_pattern {
            skipped += 1;
            return;
        }
        compared += 1;
        let numeric = (plus.0 - minus.0) / (2.0 * FD_EPS);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    };
    let eval = |layers: &[RefLayer], x: &[Vec<f64>]| {
        let (y, p) = ref_forward(layers, x);
        (objective_value(&objective, &y), p)
    };

    // Parameters, in the same order as Gradients::tensors().
    let analytic = grads.tensors();
    let mut t = 0;
    for li in 0..base.len() {
        let mut fields: Vec<fn(&mut RefLayer) -> &mut Vec<f64>> = vec![|l| &mut l.w, |l| &mut l.b];
        if !base[li].slope.is_empty() {
            fields.push(|l| &mut l.slope);
        }
        if base[li].bn {
            fields.push(|l| &mut l.gamma);
            fields.push(|l| &mut l.beta);
        }
        for field in fields {
            let len = field(&mut base[li].clone()).len();
            for k in 0..len {
                let mut p = base.clone();
                field(&mut p[li])[k] += FD_EPS;
                let mut m = base.clone();
                field(&mut m[li])[k] -= FD_EPS;
                compare(analytic[t][k] as f64, eval(&p, &x64), eval(&m, &x64));
            }
            t += 1;
        }
    }
    // Input gradient.
    for r in 0..dim {
        for c in 0..dim {
            let mut xp = x64.clone();
            xp[r][c] += FD_EPS;
            let mut xm = x64.clone();
            xm[r][c] -= FD_EPS;
            compare(dx.get(r, c) as f64, eval(&base, &xp), eval(&base, &xm));
        }
    }
    // one unit sitting near its kink skips every coordinate feeding it
    assert!(compared >= 3 * skipped, "{kind:?}: {skipped} kink skips vs {compared} checks");
    worst
}
