//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ganatt::datasets::{Group, ObservationalDataset};
use ganatt::gan::RowCodec;
use ganatt::numerics::{DenseLayer, FeedforwardNet, HiddenActivation, Matrix, OutputActivation};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale of
/// `FD_TOLERANCE * DENOMINATOR_FLOOR`, where rounding in the difference
/// quotient dominates.
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Glorot weights and small nonzero biases, so no ReLU sits exactly on its kink.
pub fn random_net(
    dims: &[usize],
    hidden: HiddenActivation,
    output: OutputActivation,
    seed: u64,
) -> FeedforwardNet {
    let mut r = rng(seed);
    let net = FeedforwardNet::new(dims, hidden, output, &mut r).unwrap();
    let layers = net
        .layers()
        .iter()
        .map(|l| DenseLayer {
            weights: l.weights.clone(),
            bias: (0..l.out_dim()).map(|_| r.gen_range(-0.1..0.1)).collect(),
        })
        .collect();
    FeedforwardNet::from_layers(layers, hidden, output).unwrap()
}

/// Smallest |pre-activation| over every hidden unit and row.
pub fn hidden_margin(net: &FeedforwardNet, batch: &Matrix) -> f64 {
    let mut a = batch.clone();
    let mut margin = f64::INFINITY;
    let n = net.layers().len();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut z = a.matmul(&layer.weights.transpose()).unwrap();
        z.add_row_broadcast(&layer.bias).unwrap();
        if i + 1 == n {
            break;
        }
        margin = z.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
        a = z.map(|v| match net.hidden_activation() {
            HiddenActivation::Relu => v.max(0.0),
            HiddenActivation::Tanh => v.tanh(),
        });
    }
    margin
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

fn weighted_sum(m: &Matrix, w: &Matrix) -> f64 {
    m.as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

/// Largest relative error between backprop and central differences of
/// `sum(upstream ⊙ net(batch))`, over every parameter and input entry.
pub fn net_gradient_error(net: &FeedforwardNet, batch: &Matrix, upstream: &Matrix) -> f64 {
    let grads = net.backward(batch, upstream).unwrap();
    let analytic: Vec<Vec<f64>> = grads
        .parameter_slices()
        .iter()
        .map(|s| s.to_vec())
        .collect();
    let f = |n: &FeedforwardNet, b: &Matrix| weighted_sum(&n.forward(b).unwrap(), upstream);
    let mut worst: f64 = 0.0;
    for (p, slice) in analytic.iter().enumerate() {
        for (i, &a) in slice.iter().enumerate() {
            let mut plus = net.clone();
            plus.parameters_mut()[p][i] += FD_STEP;
            let mut minus = net.clone();
            minus.parameters_mut()[p][i] -= FD_STEP;
            let numeric = (f(&plus, batch) - f(&minus, batch)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    for i in 0..batch.as_slice().len() {
        let mut plus = batch.clone();
        plus.as_mut_slice()[i] += FD_STEP;
        let mut minus = batch.clone();
        minus.as_mut_slice()[i] -= FD_STEP;
        let numeric = (f(net, &plus) - f(net, &minus)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grads.input.as_slice()[i], numeric));
    }
    worst
}

/// Log-loss of a sigmoid head against `labels`, backpropagated via `p − label`.
pub fn log_loss_gradient_error(net: &FeedforwardNet, batch: &Matrix, labels: &[f64]) -> f64 {
    let loss = |n: &FeedforwardNet| -> f64 {
        let z = n.forward_trace(batch).unwrap();
        z.output_preactivation()
            .as_slice()
            .iter()
            .zip(labels)
            // −[y log σ(z) + (1 − y) log(1 − σ(z))] = softplus(z) − y z
            .map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
            .sum()
    };
    let trace = net.forward_trace(batch).unwrap();
    let p = trace.output().as_slice();
    let delta = Matrix::from_vec(
        labels.len(),
        1,
        p.iter().zip(labels).map(|(p, y)| p - y).collect(),
    )
    .unwrap();
    let grads = net.backward_output_delta(&trace, delta).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, slice) in grads.parameter_slices().iter().enumerate() {
        for (i, &a) in slice.iter().enumerate() {
            let mut plus = net.clone();
            plus.parameters_mut()[pi][i] += FD_STEP;
            let mut minus = net.clone();
            minus.parameters_mut()[pi][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// Softmax segments of a codec: backward map against central differences.
pub fn codec_gradient_error(codec: &RowCodec, raw: &Matrix, upstream: &Matrix) -> f64 {
    let f = |r: &Matrix| {
        let mut a = r.clone();
        codec.activate(&mut a);
        weighted_sum(&a, upstream)
    };
    let mut activated = raw.clone();
    codec.activate(&mut activated);
    let mut grad = upstream.clone();
    codec.activate_backward(&activated, &mut grad);
    let mut worst: f64 = 0.0;
    for i in 0..raw.as_slice().len() {
        let mut plus = raw.clone();
        plus.as_mut_slice()[i] += FD_STEP;
        let mut minus = raw.clone();
        minus.as_mut_slice()[i] -= FD_STEP;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad.as_slice()[i], numeric));
    }
    worst
}

/// A dataset with one continuous covariate, one three-level covariate and a
/// continuous outcome.
pub fn mixed_dataset(n: usize, seed: u64) -> ObservationalDataset {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = r.sample(StandardNormal);
        rows.push(vec![x, (i % 3) as f64]);
        ys.push(x + r.sample::<f64, _>(StandardNormal));
        d.push(u8::from(i % 2 == 0));
    }
    ObservationalDataset::with_default_names(Matrix::from_rows(&rows).unwrap(), ys, d).unwrap()
}

/// Rows of a single group drawn from `N(mean, std²)` in one covariate, with
/// outcome equal to the covariate plus unit noise.
pub fn gaussian_group(
    n: usize,
    mean: f64,
    std: f64,
    group: Group,
    seed: u64,
) -> ObservationalDataset {
    let mut r = rng(seed);
    let xs: Vec<f64> = (0..n)
        .map(|_| mean + std * r.sample::<f64, _>(StandardNormal))
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| x + r.sample::<f64, _>(StandardNormal))
        .collect();
    ObservationalDataset::single_group(Matrix::column_vector(&xs), ys, group, vec!["x1".into()])
        .unwrap()
}

/// Property-test settings for integration targets, which have no `lib.rs`
/// beside them for proptest to store regressions next to.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}
