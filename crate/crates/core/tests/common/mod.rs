//! Helpers shared by the integration tests: seeded random data, central
//! finite differences, and oracles that take a different numerical route
//! from the library.

#![allow(dead_code)]

pub mod fgsm;
pub mod gradcheck;

use nalgebra::{DMatrix, DVector};
use ndreg::rng::SeededRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Central finite differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Denominator floor for relative errors against a central difference with
/// h = 1e-6. Rounding in the loss (~1e-15) becomes ~1e-9 of absolute noise
/// in the difference quotient, so smaller entries cannot be resolved to a
/// relative 1e-4 by that stencil.
pub const FD_FLOOR: f64 = 1e-5;

/// Largest elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
/// The floor keeps entries whose true value is zero from dividing rounding
/// noise by nothing.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Two-pass sample covariance `(1/(m−1)) Σ (a_i − ā)(b_j − b̄)`, entry by entry.
pub fn naive_cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let mean = |x: &DMatrix<f64>, j: usize| (0..m).map(|i| x[(i, j)]).sum::<f64>() / m as f64;
    let ma: Vec<f64> = (0..a.ncols()).map(|j| mean(a, j)).collect();
    let mb: Vec<f64> = (0..b.ncols()).map(|j| mean(b, j)).collect();
    DMatrix::from_fn(a.ncols(), b.ncols(), |p, q| {
        let mut s = 0.0;
        for i in 0..m {
            s += (a[(i, p)] - ma[p]) * (b[(i, q)] - mb[q]);
        }
        s / (m - 1) as f64
    })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        suv += (a - mu) * (b - mv);
        suu += (a - mu) * (a - mu);
        svv += (b - mv) * (b - mv);
    }
    suv / (suu * svv).sqrt()
}

/// Orthonormal basis (as columns) of the Euclidean complement of `vs`.
fn complement_basis(dim: usize, vs: &[DVector<f64>]) -> DMatrix<f64> {
    let mut q: Vec<DVector<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for u in &q {
            w -= u * u.dot(&w);
        }
        let n = w.norm();
        if n > 1e-10 {
            q.push(w / n);
        }
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for e in 0..dim {
        let mut w = DVector::from_fn(dim, |i, _| if i == e { 1.0 } else { 0.0 });
        for u in q.iter().chain(&basis) {
            w -= u * u.dot(&w);
        }
        let n = w.norm();
        if n > 1e-8 {
            basis.push(w / n);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Canonical correlations found by maximizing corr(X a, Y b) directly, one
/// pair at a time. Each pair is searched by alternating maximization (for
/// fixed `b`, the best `a` solves a linear system, and vice versa) inside
/// the subspace that is Σ-orthogonal to all previously found vectors. No
/// whitening, eigendecomposition or SVD is involved.
pub fn cca_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, c: usize, seed: u64) -> Vec<f64> {
    let sxx = naive_cross_cov(x, x);
    let syy = naive_cross_cov(y, y);
    let sxy = naive_cross_cov(x, y);
    let mut rng = rng(seed);
    let (mut found_a, mut found_b) = (Vec::<DVector<f64>>::new(), Vec::<DVector<f64>>::new());
    let mut rhos = Vec::with_capacity(c);
    for _ in 0..c {
        let cons_a: Vec<DVector<f64>> = found_a.iter().map(|a| &sxx * a).collect();
        let cons_b: Vec<DVector<f64>> = found_b.iter().map(|b| &syy * b).collect();
        let na = complement_basis(x.ncols(), &cons_a);
        let nb = complement_basis(y.ncols(), &cons_b);
        let pxx = na.transpose() * &sxx * &na;
        let pyy = nb.transpose() * &syy * &nb;
        let pxy = na.transpose() * &sxy * &nb;
        let step_a = pxx.clone().cholesky().expect("positive definite").solve(&pxy);
        let step_b = pyy.clone().cholesky().expect("positive definite").solve(&pxy.transpose());
        let corr = |al: &DVector<f64>, be: &DVector<f64>| {
            (al.transpose() * &pxy * be)[0] / ((al.transpose() * &pxx * al)[0] * (be.transpose() * &pyy * be)[0]).sqrt()
        };
        let mut beta = DVector::from_vec(normal_vec(nb.ncols(), &mut rng));
        let mut alpha = &step_a * &beta;
        let mut rho = corr(&alpha, &beta);
        let mut stable = 0;
        for _ in 0..2_000_000 {
            alpha = &step_a * &beta;
            alpha /= alpha.norm();
            beta = &step_b * &alpha;
            beta /= beta.norm();
            let next = corr(&alpha, &beta);
            if (next - rho).abs() <= 1e-16 * next.abs().max(1.0) {
                stable += 1;
                if stable > 50 {
                    rho = next;
                    break;
                }
            } else {
                stable = 0;
            }
            rho = next;
        }
        // Maximizing |corr| picks the sign; report the magnitude like CCA does.
        rhos.push(rho.abs());
        found_a.push(&na * alpha);
        found_b.push(&nb * beta);
    }
    rhos
}

/// Random Gaussian square matrix, re-drawn until it is comfortably
/// conditioned.
pub fn random_invertible(d: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    loop {
        let a = normal_matrix(d, d, rng);
        let svd = a.clone().svd(false, false);
        let s = &svd.singular_values;
        if s.min() > 0.05 * s.max() {
            return a;
        }
    }
}

/// Top-`k` eigenpairs of a symmetric positive semi-definite matrix by power
/// iteration with deflation.
pub fn power_eigen(a: &DMatrix<f64>, k: usize) -> Vec<(f64, DVector<f64>)> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut out = Vec::with_capacity(k);
    for e in 0..k {
        let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7 + e * 3) % 5) as f64);
        v /= v.norm();
        let mut value = 0.0;
        for _ in 0..100_000 {
            let w = &m * &v;
            let next = w.norm();
            v = w / next;
            if (next - value).abs() <= 1e-15 * next {
                value = next;
                break;
            }
            value = next;
        }
        m -= &v * v.transpose() * value;
        out.push((value, v));
    }
    out
}

/// Canonical correlations fitted on the even rows and measured on the odd
/// rows. Unlike in-sample CCA, this is unbiased for independent views.
pub fn held_out_cca(x: &DMatrix<f64>, y: &DMatrix<f64>, c: usize) -> Vec<f64> {
    use ndreg::cca::{fit_cca, CcaConfig, ViewBatch};
    let even: Vec<usize> = (0..x.nrows()).step_by(2).collect();
    let odd: Vec<usize> = (1..x.nrows()).step_by(2).collect();
    let fit = fit_cca(
        &ViewBatch::new(x.select_rows(even.iter()), y.select_rows(even.iter())).unwrap(),
        &CcaConfig { c, reg: 1e-8 },
    )
    .unwrap();
    let (tx, ty) = (x.select_rows(odd.iter()), y.select_rows(odd.iter()));
    (0..c)
        .map(|i| {
            let u = &tx * fit.proj_x.column(i);
            let v = &ty * fit.proj_y.column(i);
            pearson(u.as_slice(), v.as_slice())
        })
        .collect()
}

pub fn to_matrix(t: &ndreg::Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.batch(), t.row_len(), t.data())
}

/// A compact fully synthetic experiment: 3 classes, a tiny CORnet-Z and a
/// narrow DCCA branch, with `extra` lines applied last.
pub fn tiny_config(extra: &str) -> ndreg::training::ExperimentConfig {
    let mut cfg = ndreg::training::ExperimentConfig::default();
    cfg.apply_document(&format!(
        "epochs = 2
         batch_cifar = 16
         batch_dcca = 10
         neural_cycles_per_epoch = 2
         c = 4
         cornet.channels = 4,4,8,8
         dcca.hidden_width = 16
         dcca.output_width = 4
         dcca.init = he_normal
         synthetic_cifar.classes = 3,42,50
         synthetic_cifar.train_per_class = 16
         synthetic_cifar.test_per_class = 8
         synthetic_neural.n_images = 45
         synthetic_neural.n_sessions = 2
         synthetic_neural.n_neurons = 12
         synthetic_neural.n_repeats = 4
         synthetic_neural.k = 5
         {extra}"
    ))
    .unwrap();
    cfg
}
