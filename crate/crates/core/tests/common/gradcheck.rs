//! Finite-difference checks of single layers and small stacks.

use super::{central_diff, max_rel_err, normal_vec, rng, FD_FLOOR};
use ndreg::nn::{Init, LayerSpec, Network};
use ndreg::rng::SeededRng;
use ndreg::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

pub const H: f64 = 1e-5;
pub const TRIALS: usize = 100;

/// `Σ r ⊙ net(x)` with a fixed dropout stream, so repeated evaluations see
/// the same masks.
pub fn linear_loss(net: &mut Network, x: &Tensor, r: &[f64]) -> f64 {
    let out = net.forward(x, Some(&mut rng(77))).unwrap();
    net.clear_caches();
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst relative error of the parameter and input gradients of `net` at
/// `x` against central differences.
pub fn gradcheck(net: &Network, x: &Tensor, trial: &mut SeededRng) -> (f64, f64) {
    let mut net = net.clone();
    let out = net.forward(x, Some(&mut rng(77))).unwrap();
    let r = normal_vec(out.len(), trial);
    let back = net.backward(Tensor::new(out.shape().to_vec(), r.clone()).unwrap()).unwrap();

    let theta = net.flat_params();
    let mut probe = net.clone();
    let num_p = central_diff(&theta, H, |p| {
        probe.set_flat_params(p).unwrap();
        linear_loss(&mut probe, x, &r)
    });
    let mut probe = net.clone();
    let num_x = central_diff(x.data(), H, |p| {
        linear_loss(&mut probe, &Tensor::new(x.shape().to_vec(), p.to_vec()).unwrap(), &r)
    });
    (
        max_rel_err(&back.params.flatten(), &num_p, FD_FLOOR),
        max_rel_err(back.input.data(), &num_x, FD_FLOOR),
    )
}

pub fn normal_tensor(shape: Vec<usize>, r: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, normal_vec(n, r)).unwrap()
}

/// Values kept at least 0.01 away from zero so no ReLU kink is crossed.
pub fn off_zero_tensor(shape: Vec<usize>, r: &mut SeededRng) -> Tensor {
    let t = normal_tensor(shape, r);
    t.map(|v| v.signum() * (0.01 + v.abs()))
}

/// Distinct values 0.01 apart, so every pooling window has a clear winner.
pub fn distinct_tensor(shape: Vec<usize>, r: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(r);
    Tensor::new(shape, ranks.into_iter().map(|k| 0.01 * k as f64 - 0.3).collect()).unwrap()
}

/// Layer kinds with a random-case generator in [`layer_case`].
pub const KINDS: [&str; 7] = ["dense", "conv2d", "relu", "maxpool2d", "dropout", "flatten", "mlp"];

/// A random network of one `kind` and an input that keeps it differentiable.
pub fn layer_case(kind: &str, r: &mut SeededRng) -> (Network, Tensor) {
    match kind {
        "dense" => {
        let (b, d, u) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=5));
        let spec = LayerSpec::Dense { units: u, init: Init::Normal { std: 0.5 }, weight_decay: 0.0 };
        let net = Network::new(&[d], vec![spec], r).unwrap();
        (net, normal_tensor(vec![b, d], r))
        }
        "conv2d" => {
        let shape = image_shape(r);
        let kernel = r.random_range(1..=3).min(shape[1]).min(shape[2]);
        let spec = LayerSpec::Conv2d {
            filters: r.random_range(1..=3),
            kernel,
            stride: r.random_range(1..=2),
            padding: r.random_range(0..=1),
            init: Init::Normal { std: 0.5 },
            weight_decay: 0.0,
        };
        let net = Network::new(&shape[1..], vec![spec], r).unwrap();
        (net, normal_tensor(shape, r))
        }
        "relu" => {
        let shape = vec![r.random_range(1..=4), r.random_range(1..=8)];
        let net = Network::new(&shape[1..], vec![LayerSpec::Relu], r).unwrap();
        (net, off_zero_tensor(shape, r))
        }
        "maxpool2d" => {
        let shape = image_shape(r);
        let size = r.random_range(1..=3).min(shape[1]).min(shape[2]);
        let spec = LayerSpec::MaxPool2d { size, stride: r.random_range(1..=3) };
        let net = Network::new(&shape[1..], vec![spec], r).unwrap();
        (net, distinct_tensor(shape, r))
        }
        "dropout" => {
        let shape = vec![r.random_range(1..=4), r.random_range(1..=10)];
        let rate = r.random_range(0.0..0.9);
        let net = Network::new(&shape[1..], vec![LayerSpec::Dropout { rate }], r).unwrap();
        (net, normal_tensor(shape, r))
        }
        "flatten" => {
        let shape = image_shape(r);
        let net = Network::new(&shape[1..], vec![LayerSpec::Flatten], r).unwrap();
        (net, normal_tensor(shape, r))
        }
        "mlp" => {
        let d = r.random_range(2..=6);
        let dense = |units| LayerSpec::Dense { units, init: Init::HeNormal, weight_decay: 0.0 };
        let specs = vec![dense(7), LayerSpec::Relu, dense(5), LayerSpec::Relu, dense(3)];
        let net = Network::new(&[d], specs, r).unwrap();
        // Finite differences are meaningless across a ReLU kink, so keep every
        // hidden pre-activation clear of zero.
        loop {
            let x = normal_tensor(vec![3, d], r);
            let clear = [1, 3].iter().all(|&end| {
                net.infer_span(0..end, &x).unwrap().data().iter().all(|v| v.abs() > 1e-3)
            });
            if clear {
                return (net, x);
            }
        }
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Worst (parameter, input) relative errors over [`TRIALS`] random cases.
pub fn worst_errors(kind: &str) -> (f64, f64) {
    let mut r = rng(kind.len() as u64 * 1000 + 7);
    let (mut worst_p, mut worst_x) = (0.0f64, 0.0f64);
    for _ in 0..TRIALS {
        let (net, x) = layer_case(kind, &mut r);
        let (ep, ex) = gradcheck(&net, &x, &mut r);
        worst_p = worst_p.max(ep);
        worst_x = worst_x.max(ex);
    }
    (worst_p, worst_x)
}

fn image_shape(r: &mut SeededRng) -> Vec<usize> {
    vec![r.random_range(1..=3), r.random_range(3..=6), r.random_range(3..=6), r.random_range(1..=3)]
}
