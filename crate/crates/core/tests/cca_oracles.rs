mod common;

use common::{cca_oracle, central_diff, max_rel_err, naive_cross_cov, normal_matrix, pearson, rng, FD_FLOOR};
use nalgebra::DMatrix;
use ndreg::cca::{
    build_dcca_branch, centered_covariances, dcca_loss, dcca_loss_grad, dcca_objective, fit_cca, CcaConfig,
    DccaBranchConfig, ViewBatch,
};
use ndreg::data::{make_synthetic_corpus, SyntheticSpec};
use ndreg::nn::sgd_step;
use ndreg::rng::{stream, Stream};
use ndreg::Tensor;
use rand::Rng;

fn batch(x: &DMatrix<f64>, y: &DMatrix<f64>) -> ViewBatch {
    ViewBatch::new(x.clone(), y.clone()).unwrap()
}

#[test]
fn covariances_match_two_pass_oracle() {
    let mut r = rng(11);
    let x = normal_matrix(50, 4, &mut r);
    let y = normal_matrix(50, 3, &mut r);
    let cov = centered_covariances(&batch(&x, &y), 0.0).unwrap();
    for (got, want) in [
        (&cov.sxx, naive_cross_cov(&x, &x)),
        (&cov.syy, naive_cross_cov(&y, &y)),
        (&cov.sxy, naive_cross_cov(&x, &y)),
    ] {
        assert!((got - want).abs().max() < 1e-12);
    }
}

#[test]
fn correlations_match_constrained_maximization_oracle() {
    let mut r = rng(12);
    let x = normal_matrix(30, 3, &mut r);
    let y = normal_matrix(30, 3, &mut r);
    let got = fit_cca(&batch(&x, &y), &CcaConfig { c: 3, reg: 0.0 }).unwrap().correlations;
    let want = cca_oracle(&x, &y, 3, 1);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
    }
}

#[test]
fn canonical_pairs_satisfy_the_correlation_definition() {
    let mut r = rng(13);
    let x = normal_matrix(40, 5, &mut r);
    let y = normal_matrix(40, 4, &mut r);
    let res = fit_cca(&batch(&x, &y), &CcaConfig { c: 4, reg: 0.0 }).unwrap();
    for i in 0..4 {
        let u = &x * res.proj_x.column(i);
        let v = &y * res.proj_y.column(i);
        let rho = pearson(u.as_slice(), v.as_slice());
        assert!((rho - res.correlations[i]).abs() < 1e-8);
    }
}

#[test]
fn independent_large_sample_views_are_uncorrelated() {
    let mut r = rng(14);
    let x = normal_matrix(10_000, 3, &mut r);
    let y = normal_matrix(10_000, 3, &mut r);
    let cfg = CcaConfig { c: 3, reg: 0.0 };
    let res = fit_cca(&batch(&x, &y), &cfg).unwrap();
    assert!(res.correlations.iter().all(|&p| p < 0.05), "{:?}", res.correlations);
    assert!(dcca_loss(&batch(&x, &y), &cfg).unwrap().abs() < 0.05);
}

#[test]
fn dcca_gradient_matches_finite_differences() {
    let cfg = CcaConfig { c: 3, reg: 1e-4 };
    let mut r = rng(15);
    let x = normal_matrix(20, 6, &mut r);
    let y = normal_matrix(20, 5, &mut r);
    let (gx, gy) = dcca_loss_grad(&batch(&x, &y), &cfg).unwrap();
    let nx = central_diff(x.as_slice(), 1e-6, |p| {
        dcca_loss(&batch(&DMatrix::from_column_slice(20, 6, p), &y), &cfg).unwrap()
    });
    let ny = central_diff(y.as_slice(), 1e-6, |p| {
        dcca_loss(&batch(&x, &DMatrix::from_column_slice(20, 5, p)), &cfg).unwrap()
    });
    assert!(max_rel_err(gx.as_slice(), &nx, FD_FLOOR) < 1e-4);
    assert!(max_rel_err(gy.as_slice(), &ny, FD_FLOOR) < 1e-4);
}

/// A coarser stencil has far less rounding noise, so it also pins down the
/// tiny gradient entries that the h = 1e-6 check floors away.
#[test]
fn dcca_gradient_small_entries_with_coarse_stencil() {
    let cfg = CcaConfig { c: 3, reg: 1e-4 };
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let x = normal_matrix(20, 6, &mut r);
        let y = normal_matrix(20, 5, &mut r);
        let (gx, _) = dcca_loss_grad(&batch(&x, &y), &cfg).unwrap();
        let nx = central_diff(x.as_slice(), 1e-4, |p| {
            dcca_loss(&batch(&DMatrix::from_column_slice(20, 6, p), &y), &cfg).unwrap()
        });
        assert!(max_rel_err(gx.as_slice(), &nx, 1e-9) < 1e-4);
    }
}

#[test]
fn gradient_is_stationary_for_linearly_related_views() {
    let mut r = rng(16);
    let x = normal_matrix(30, 4, &mut r);
    let q = common::random_invertible(4, &mut r);
    let y = &x * q;
    let (gx, gy) = dcca_loss_grad(&batch(&x, &y), &CcaConfig { c: 4, reg: 0.0 }).unwrap();
    assert!(gx.norm() < 1e-6 && gy.norm() < 1e-6, "{} {}", gx.norm(), gy.norm());
}

#[test]
fn doubling_both_views_keeps_correlations() {
    let mut r = rng(17);
    let x = normal_matrix(25, 4, &mut r);
    let y = normal_matrix(25, 4, &mut r);
    let cfg = CcaConfig { c: 4, reg: 0.0 };
    let a = fit_cca(&batch(&x, &y), &cfg).unwrap().correlations;
    let b = fit_cca(&batch(&(&x * 2.0), &(&y * 2.0)), &cfg).unwrap().correlations;
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn branch_parameter_count_for_a_4096_wide_view() {
    let mut r = stream(0, Stream::DccaInit);
    let cfg = DccaBranchConfig::default();
    let (fx, _) = build_dcca_branch(4096, 8, &cfg, 10, &mut r).unwrap();
    let want = 4096 * 1024 + 1024 + 2 * (1024 * 1024 + 1024) + 1024 * 10 + 10;
    assert_eq!(fx.param_count(), want);
}

/// Untrained compact branches on synthetic correlated data: plain SGD on a
/// fixed batch lowers the DCCA loss at every one of 50 steps.
#[test]
fn branch_training_descends_on_a_fixed_batch() {
    let mut spec = SyntheticSpec { n_images: 50, n_sessions: 1, n_neurons: 30, ..SyntheticSpec::default() };
    spec.signal_strength = 0.9;
    let corpus = make_synthetic_corpus(&spec).unwrap();
    let images = corpus.images.clone().flatten_batch();
    let responses = ndreg::data::average_repeats(&corpus.sessions[0]);

    let branch_cfg = DccaBranchConfig { hidden_width: 32, ..DccaBranchConfig::default() };
    let cca = CcaConfig { c: 10, reg: 1e-4 };
    let mut init = stream(3, Stream::DccaInit);
    let (mut fx, mut fy) = build_dcca_branch(images.row_len(), responses.row_len(), &branch_cfg, cca.c, &mut init)
        .unwrap();
    fx.set_mode(ndreg::nn::Mode::Eval);
    fy.set_mode(ndreg::nn::Mode::Eval);
    let mut losses = Vec::new();
    for step in 0..=50 {
        let hx = fx.forward(&images, None).unwrap();
        let hy = fy.forward(&responses, None).unwrap();
        let obj = dcca_objective(&ViewBatch::from_tensors(&hx, &hy).unwrap(), &cca).unwrap();
        losses.push(obj.loss);
        if step == 50 {
            break;
        }
        let bx = fx.backward(obj.grad_x_tensor()).unwrap();
        let by = fy.backward(obj.grad_y_tensor()).unwrap();
        sgd_step(&mut fx, &bx.params, 1e-3, step).unwrap();
        sgd_step(&mut fy, &by.params, 1e-3, step).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went up: {losses:?}");
    }
}

#[test]
fn loss_range_with_no_ridge() {
    let mut r = rng(18);
    for _ in 0..20 {
        let m = r.random_range(8..40);
        let x = normal_matrix(m, 3, &mut r);
        let y = normal_matrix(m, 4, &mut r);
        let l = dcca_loss(&batch(&x, &y), &CcaConfig { c: 3, reg: 0.0 }).unwrap();
        assert!((-1.0 - 1e-10..=1e-10).contains(&l));
    }
    let t = Tensor::zeros(&[2, 2]);
    assert!(ViewBatch::from_tensors(&t, &Tensor::zeros(&[3, 2])).is_err());
}
