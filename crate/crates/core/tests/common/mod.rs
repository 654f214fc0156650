//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls the crate's math kernels.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinyprop::network::{Activation, LossKind, Network};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn mnist_dir() -> PathBuf {
    repo_root().join("data/mnist-subset")
}

/// A random network of 1-3 layers with at most `max_params` parameters.
/// Hidden activations are drawn from ReLU/Sigmoid; the output/loss pair is
/// one of sigmoid+MSE, identity+MSE, softmax+CE or sigmoid+CE.
pub fn random_net(rng: &mut ChaCha8Rng, max_params: usize) -> Network {
    loop {
        let depth = rng.gen_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.gen_range(2..=6)).collect();
        let params: usize = widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        if params > max_params {
            continue;
        }
        let hidden = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Sigmoid };
        let (output, loss) = match rng.gen_range(0..4) {
            0 => (Activation::Sigmoid, LossKind::Mse),
            1 => (Activation::Identity, LossKind::Mse),
            2 => (Activation::SoftmaxCe, LossKind::CrossEntropy),
            _ => (Activation::Sigmoid, LossKind::CrossEntropy),
        };
        let mut net = Network::init(&widths, hidden, output, loss, rng).unwrap();
        // non-zero biases so every parameter is exercised
        for layer in net.layers_mut() {
            for b in &mut layer.bias {
                *b = rng.gen_range(-0.3..0.3);
            }
        }
        // mixed hidden activations: flip one hidden layer when there are two
        if depth == 3 {
            let other = if hidden == Activation::Relu { Activation::Sigmoid } else { Activation::Relu };
            net.layers_mut()[1].activation = other;
        }
        return net;
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn one_hot(n: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn act64(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Identity | Activation::SoftmaxCe => z,
    }
}

/// Double-precision forward pass; returns every layer's pre-activations and the loss.
pub fn forward64(net: &Network, x: &[f32], y: &[f32]) -> (Vec<Vec<f64>>, f64) {
    let mut a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut zs = Vec::new();
    for layer in net.layers() {
        let w = &layer.weights;
        let z: Vec<f64> = (0..w.rows())
            .map(|i| {
                layer.bias[i] as f64
                    + w.row(i).iter().zip(&a).map(|(&wij, aj)| wij as f64 * aj).sum::<f64>()
            })
            .collect();
        a = z.iter().map(|&v| act64(layer.activation, v)).collect();
        zs.push(z);
    }
    let y: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let loss = match net.loss_kind() {
        LossKind::Mse => a.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / a.len() as f64,
        LossKind::CrossEntropy => {
            let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            -a.iter().zip(&y).map(|(v, t)| t * (v - lse)).sum::<f64>()
        }
    };
    (zs, loss)
}

/// Central differences of the f64 loss for every weight and bias, in the
/// order layer by layer, weights row-major then biases.
pub fn finite_difference(net: &Network, x: &[f32], y: &[f32], h: f64) -> Vec<f64> {
    let mut probe = net.clone();
    let mut out = Vec::new();
    for l in 0..net.depth() {
        let rows = net.layers()[l].weights.rows();
        let cols = net.layers()[l].weights.cols();
        let count = rows * cols + rows;
        for p in 0..count {
            let original = read_param(&probe, l, p);
            let mut eval = |v: f64| {
                write_param(&mut probe, l, p, v);
                forward64(&probe, x, y).1
            };
            // perturb in f64 space: the probe stores f32, so use exactly representable steps
            let up = (original as f64 + h) as f32;
            let down = (original as f64 - h) as f32;
            let plus = eval(up as f64);
            let minus = eval(down as f64);
            write_param(&mut probe, l, p, original as f64);
            out.push((plus - minus) / (up as f64 - down as f64));
        }
    }
    out
}

fn read_param(net: &Network, l: usize, p: usize) -> f32 {
    let layer = &net.layers()[l];
    let n = layer.weights.rows() * layer.weights.cols();
    if p < n {
        layer.weights.as_slice()[p]
    } else {
        layer.bias[p - n]
    }
}

fn write_param(net: &mut Network, l: usize, p: usize, v: f64) {
    let layer = &mut net.layers_mut()[l];
    let n = layer.weights.rows() * layer.weights.cols();
    if p < n {
        layer.weights.as_mut_slice()[p] = v as f32;
    } else {
        layer.bias[p - n] = v as f32;
    }
}

/// Smallest |z| over all ReLU pre-activations (infinite if there are none).
pub fn relu_margin(net: &Network, x: &[f32]) -> f64 {
    let (zs, _) = forward64(net, x, &vec![0.0; net.output_width()]);
    zs.iter()
        .zip(net.layers())
        .filter(|(_, l)| l.activation == Activation::Relu)
        .flat_map(|(z, _)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Top-k by sorting: largest |v| first, lower index on ties, returned ascending.
pub fn top_k_by_sort(v: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Multinomial logistic regression by full-batch gradient descent in f64;
/// returns test accuracy. Used to confirm a dataset is (nearly) linearly separable.
pub fn logistic_regression_accuracy(
    train: &tinyprop::Dataset,
    test: &tinyprop::Dataset,
    iterations: usize,
    lr: f64,
) -> f64 {
    let d = train.input_dim();
    let c = train.num_classes();
    let mut w = vec![vec![0.0f64; d + 1]; c];
    let scores = |w: &[Vec<f64>], x: &[f32]| -> Vec<f64> {
        w.iter()
            .map(|row| row[d] + row[..d].iter().zip(x).map(|(a, &b)| a * b as f64).sum::<f64>())
            .collect()
    };
    for _ in 0..iterations {
        let mut grad = vec![vec![0.0f64; d + 1]; c];
        for i in 0..train.len() {
            let x = train.features(i);
            let s = scores(&w, x);
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = e.iter().sum();
            for k in 0..c {
                let g = e[k] / total - if train.label(i) == k { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[k][j] += g * x[j] as f64;
                }
                grad[k][d] += g;
            }
        }
        for k in 0..c {
            for j in 0..=d {
                w[k][j] -= lr * grad[k][j] / train.len() as f64;
            }
        }
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let s = scores(&w, test.features(i));
            let best = (0..c).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            best == test.label(i)
        })
        .count();
    correct as f64 / test.len() as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flattens `backward_full` in the same parameter order as [`finite_difference`].
pub fn analytic_gradient(net: &mut Network, x: &[f32], y: &[f32]) -> Vec<f64> {
    net.forward(x).unwrap();
    let grads = tinyprop::backprop::backward_full(net, y).unwrap();
    grads
        .layers
        .iter()
        .flat_map(|g| {
            let mut v: Vec<f64> = g.dense_weights().as_slice().iter().map(|&w| w as f64).collect();
            v.extend(g.dense_bias().iter().map(|&b| b as f64));
            v
        })
        .collect()
}

/// Gradients below this magnitude are compared absolutely against it.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Largest `|g - fd| / max(|g|, |fd|, GRADIENT_FLOOR)` over all parameters.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR))
        .fold(0.0, f64::max)
}

/// Draws an input whose ReLU pre-activations all sit at least `margin` from the kink.
pub fn input_away_from_kinks(rng: &mut ChaCha8Rng, net: &Network, margin: f64) -> Vec<f32> {
    loop {
        let x = random_vec(rng, net.input_width(), 1.0);
        if relu_margin(net, &x) > margin {
            return x;
        }
    }
}
