//! Canonical correlation analysis and the deep-CCA loss.
//!
//! For column-centered views `H̄x [m, dx]` and `H̄y [m, dy]` the (ridged)
//! covariances are
//!
//! ```text
//! Σxx = H̄xᵀH̄x / (m-1) + r·I,   Σyy = H̄yᵀH̄y / (m-1) + r·I,   Σxy = H̄xᵀH̄y / (m-1)
//! ```
//!
//! and the canonical correlations are the singular values of the whitened
//! cross-covariance `T = Σxx^{-1/2} Σxy Σyy^{-1/2}`. The DCCA loss is the
//! negated mean of the top-`c` of them, so it lies in `[-1, 0]`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, inv_sqrt, matrix_from_tensor, tensor_from_matrix, Matrix};
use crate::nn::{Init, LayerSpec, Network};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Relative eigenvalue threshold below which an unregularized
/// auto-covariance is treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

/// Gap between the `c`-th and `(c+1)`-th singular values below which the
/// truncated objective is not differentiable.
pub const TIE_TOLERANCE: f64 = 1e-8;

/// Two views of the same `m` samples, one row per sample.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    h_x: Matrix,
    h_y: Matrix,
}

impl ViewBatch {
    pub fn new(h_x: DMatrix<f64>, h_y: DMatrix<f64>) -> Result<Self> {
        if h_x.nrows() != h_y.nrows() {
            return Err(Error::input(format!(
                "views disagree on batch size: {} vs {}",
                h_x.nrows(),
                h_y.nrows()
            )));
        }
        if h_x.nrows() < 2 {
            return Err(Error::input("CCA needs at least two samples"));
        }
        if h_x.ncols() == 0 || h_y.ncols() == 0 {
            return Err(Error::input("views must have at least one column"));
        }
        if !h_x.iter().chain(h_y.iter()).all(|v| v.is_finite()) {
            return Err(Error::input("views contain non-finite entries"));
        }
        Ok(Self { h_x, h_y })
    }

    /// Builds a batch from two `[m, d]` tensors.
    pub fn from_tensors(x: &Tensor, y: &Tensor) -> Result<Self> {
        if x.shape().len() != 2 || y.shape().len() != 2 {
            return Err(Error::input("views must be [m, d] tensors"));
        }
        Self::new(matrix_from_tensor(x), matrix_from_tensor(y))
    }

    pub fn h_x(&self) -> &DMatrix<f64> {
        &self.h_x
    }

    pub fn h_y(&self) -> &DMatrix<f64> {
        &self.h_y
    }

    pub fn m(&self) -> usize {
        self.h_x.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcaConfig {
    /// Number of canonical pairs.
    pub c: usize,
    /// Ridge added to each auto-covariance diagonal.
    pub reg: f64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self { c: 10, reg: 1e-4 }
    }
}

/// Canonical correlations (descending) and projection vectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    pub correlations: Vec<f64>,
    pub proj_x: DMatrix<f64>,
    pub proj_y: DMatrix<f64>,
}

#[derive(Serialize)]
struct CcaResultJson<'a> {
    correlations: &'a [f64],
    proj_x: Vec<Vec<f64>>,
    proj_y: Vec<Vec<f64>>,
}

impl CcaResult {
    /// JSON with projection matrices written row by row.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| {
            m.row_iter()
                .map(|r| r.iter().copied().collect())
                .collect::<Vec<Vec<f64>>>()
        };
        serde_json::to_value(CcaResultJson {
            correlations: &self.correlations,
            proj_x: rows(&self.proj_x),
            proj_y: rows(&self.proj_y),
        })
        .expect("finite values serialize")
    }

    pub fn sum(&self) -> f64 {
        self.correlations.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Covariances {
    pub sxx: DMatrix<f64>,
    pub syy: DMatrix<f64>,
    pub sxy: DMatrix<f64>,
}

pub fn centered_covariances(batch: &ViewBatch, reg: f64) -> Result<Covariances> {
    centered_parts(batch, reg).map(|p| p.cov)
}

struct Parts {
    hx: Matrix,
    hy: Matrix,
    cov: Covariances,
}

fn centered_parts(batch: &ViewBatch, reg: f64) -> Result<Parts> {
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::input(format!("ridge must be finite and >= 0, got {reg}")));
    }
    let hx = center_columns(&batch.h_x);
    let hy = center_columns(&batch.h_y);
    let scale = 1.0 / (batch.m() - 1) as f64;
    let mut sxx = hx.tr_mul(&hx) * scale;
    let mut syy = hy.tr_mul(&hy) * scale;
    let sxy = hx.tr_mul(&hy) * scale;
    // exact symmetry; the two triangles can differ in the last bit
    symmetrize(&mut sxx);
    symmetrize(&mut syy);
    for i in 0..sxx.nrows() {
        sxx[(i, i)] += reg;
    }
    for i in 0..syy.nrows() {
        syy[(i, i)] += reg;
    }
    Ok(Parts {
        hx,
        hy,
        cov: Covariances { sxx, syy, sxy },
    })
}

fn symmetrize(s: &mut Matrix) {
    for i in 0..s.nrows() {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
}

fn whitener(s: &Matrix, reg: f64, view: &str) -> Result<Matrix> {
    let (w, values) = inv_sqrt(s);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if max <= 0.0 || (reg == 0.0 && min <= SINGULAR_RTOL * max) {
        return Err(Error::Numerical(format!(
            "{view} auto-covariance is singular (eigenvalues in [{min:e}, {max:e}]); use a ridge r > 0"
        )));
    }
    Ok(w)
}

/// Whitened cross-covariance and its SVD, singular triplets sorted descending.
struct Whitened {
    wx: Matrix,
    wy: Matrix,
    sigma: Vec<f64>,
    u: Matrix,
    v: Matrix,
}

fn whiten_and_decompose(cov: &Covariances, reg: f64) -> Result<Whitened> {
    let wx = whitener(&cov.sxx, reg, "x-view")?;
    let wy = whitener(&cov.syy, reg, "y-view")?;
    let t = &wx * &cov.sxy * &wy;
    let svd = t.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = Matrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| v_t.row(i).transpose().into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(Whitened { wx, wy, sigma, u, v })
}

fn check_c(batch: &ViewBatch, cfg: &CcaConfig) -> Result<()> {
    let max = batch.h_x.ncols().min(batch.h_y.ncols());
    if cfg.c == 0 || cfg.c > max {
        return Err(Error::input(format!(
            "number of canonical pairs must be in [1, {max}], got {}",
            cfg.c
        )));
    }
    Ok(())
}

/// Classical CCA: top-`c` canonical correlations and projection vectors.
///
/// Each `(aᵢ, bᵢ)` pair is sign-normalized so the first nonzero entry of
/// `aᵢ` is positive.
pub fn fit_cca(batch: &ViewBatch, cfg: &CcaConfig) -> Result<CcaResult> {
    check_c(batch, cfg)?;
    let parts = centered_parts(batch, cfg.reg)?;
    let w = whiten_and_decompose(&parts.cov, cfg.reg)?;
    let c = cfg.c;
    let mut proj_x = &w.wx * w.u.columns(0, c);
    let mut proj_y = &w.wy * w.v.columns(0, c);
    for i in 0..c {
        let col = proj_x.column(i);
        let tol = col.amax() * 1e-12;
        if let Some(first) = col.iter().copied().find(|v| v.abs() > tol) {
            if first < 0.0 {
                proj_x.column_mut(i).neg_mut();
                proj_y.column_mut(i).neg_mut();
            }
        }
    }
    Ok(CcaResult {
        correlations: w.sigma[..c].to_vec(),
        proj_x,
        proj_y,
    })
}

/// `-(ρ₁ + … + ρ_c) / c`.
pub fn dcca_loss(batch: &ViewBatch, cfg: &CcaConfig) -> Result<f64> {
    let res = fit_cca(batch, cfg)?;
    Ok(-res.sum() / cfg.c as f64)
}

/// Loss, correlations and gradients of one DCCA evaluation.
#[derive(Debug, Clone)]
pub struct DccaObjective {
    pub loss: f64,
    pub correlations: Vec<f64>,
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
}

impl DccaObjective {
    pub fn mean_correlation(&self) -> f64 {
        -self.loss
    }

    pub fn grad_x_tensor(&self) -> Tensor {
        tensor_from_matrix(&self.grad_x)
    }

    pub fn grad_y_tensor(&self) -> Tensor {
        tensor_from_matrix(&self.grad_y)
    }
}

/// Gradient of [`dcca_loss`] with respect to both view matrices.
pub fn dcca_loss_grad(batch: &ViewBatch, cfg: &CcaConfig) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    dcca_objective(batch, cfg).map(|o| (o.grad_x, o.grad_y))
}

/// Evaluates the DCCA loss together with its analytic gradient.
///
/// With `T = U D Vᵀ` truncated to `c` pairs and `Wx = Σxx^{-1/2}`,
/// `Wy = Σyy^{-1/2}`, the gradient of the correlation sum is
///
/// ```text
/// ∂/∂Σxy = Wx U Vᵀ Wy
/// ∂/∂Σxx = -½ Wx U D Uᵀ Wx      (likewise Σyy with V)
/// ∂/∂H̄x  = (2 H̄x ∂Σxx + H̄y ∂Σxyᵀ) / (m-1)
/// ```
///
/// which is then scaled by `-1/c` and projected onto centered matrices.
pub fn dcca_objective(batch: &ViewBatch, cfg: &CcaConfig) -> Result<DccaObjective> {
    check_c(batch, cfg)?;
    let parts = centered_parts(batch, cfg.reg)?;
    let w = whiten_and_decompose(&parts.cov, cfg.reg)?;
    let c = cfg.c;
    if let Some(&next) = w.sigma.get(c) {
        if w.sigma[c - 1] - next <= TIE_TOLERANCE {
            warn!(
                "singular values {} and {} tie at the truncation boundary; using a subgradient",
                w.sigma[c - 1],
                next
            );
        }
    }
    let uc = w.u.columns(0, c).into_owned();
    let vc = w.v.columns(0, c).into_owned();
    let d = Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(&w.sigma[..c]));

    let g_xy = &w.wx * &uc * vc.transpose() * &w.wy;
    let g_xx = &w.wx * &uc * &d * uc.transpose() * &w.wx * -0.5;
    let g_yy = &w.wy * &vc * &d * vc.transpose() * &w.wy * -0.5;

    let scale = -1.0 / (c as f64 * (batch.m() - 1) as f64);
    let gx = (&parts.hx * &g_xx * 2.0 + &parts.hy * g_xy.transpose()) * scale;
    let gy = (&parts.hy * &g_yy * 2.0 + &parts.hx * &g_xy) * scale;

    let correlations = w.sigma[..c].to_vec();
    let loss = -correlations.iter().sum::<f64>() / c as f64;
    Ok(DccaObjective {
        loss,
        correlations,
        grad_x: center_columns(&gx),
        grad_y: center_columns(&gy),
    })
}

/// Hyperparameters of one DCCA sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccaBranchConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_width: usize,
    pub dropout: f64,
    pub init: Init,
    pub weight_decay: f64,
}

impl Default for DccaBranchConfig {
    fn default() -> Self {
        Self {
            hidden_width: 1024,
            hidden_layers: 3,
            output_width: 10,
            dropout: 0.0001,
            init: Init::Normal { std: 0.01 },
            weight_decay: 0.00001,
        }
    }
}

/// `input → (dense + ReLU) × hidden_layers → dropout → dense(output_width)`.
pub fn build_dcca_subnet(input_dim: usize, cfg: &DccaBranchConfig, rng: &mut SeededRng) -> Result<Network> {
    let dense = |units| LayerSpec::Dense {
        units,
        init: cfg.init,
        weight_decay: cfg.weight_decay,
    };
    let mut specs = Vec::with_capacity(2 * cfg.hidden_layers + 2);
    for _ in 0..cfg.hidden_layers {
        specs.push(dense(cfg.hidden_width));
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::Dropout { rate: cfg.dropout });
    specs.push(dense(cfg.output_width));
    Network::new(&[input_dim], specs, rng)
}

/// The two independent sub-networks `f_x` (CNN view) and `f_y` (brain view).
pub fn build_dcca_branch(
    d_x: usize,
    d_y: usize,
    cfg: &DccaBranchConfig,
    c: usize,
    rng: &mut SeededRng,
) -> Result<(Network, Network)> {
    if d_x == 0 || d_y == 0 {
        return Err(Error::input("DCCA view widths must be positive"));
    }
    if cfg.output_width < c {
        return Err(Error::input(format!(
            "DCCA output width {} is smaller than the {} canonical pairs",
            cfg.output_width, c
        )));
    }
    let fx = build_dcca_subnet(d_x, cfg, rng)?;
    let fy = build_dcca_subnet(d_y, cfg, rng)?;
    Ok((fx, fy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn rng(seed: u64) -> SeededRng {
        stream(seed, Stream::Data)
    }

    #[test]
    fn identical_views_share_covariances() {
        let x = random(20, 3, &mut rng(1));
        let cov = centered_covariances(&ViewBatch::new(x.clone(), x).unwrap(), 0.0).unwrap();
        assert_eq!(cov.sxx, cov.syy);
        assert!((&cov.sxx - &cov.sxy).amax() < 1e-15);
    }

    #[test]
    fn constant_column_diagonal_equals_ridge() {
        let mut x = random(10, 3, &mut rng(2));
        x.column_mut(1).fill(4.25);
        let y = random(10, 2, &mut rng(3));
        let cov = centered_covariances(&ViewBatch::new(x, y).unwrap(), 0.125).unwrap();
        assert_eq!(cov.sxx[(1, 1)], 0.125);
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(ViewBatch::new(random(1, 2, &mut rng(0)), random(1, 2, &mut rng(1))).is_err());
        assert!(ViewBatch::new(random(3, 2, &mut rng(0)), random(4, 2, &mut rng(1))).is_err());
        let mut x = random(3, 2, &mut rng(0));
        x[(0, 0)] = f64::NAN;
        assert!(ViewBatch::new(x, random(3, 2, &mut rng(1))).is_err());
    }

    #[test]
    fn rejects_c_out_of_range() {
        let b = ViewBatch::new(random(10, 3, &mut rng(0)), random(10, 2, &mut rng(1))).unwrap();
        assert!(fit_cca(&b, &CcaConfig { c: 3, reg: 0.0 }).is_err());
        assert!(fit_cca(&b, &CcaConfig { c: 0, reg: 0.0 }).is_err());
    }

    #[test]
    fn singular_without_ridge_is_numerical_error() {
        let mut x = random(10, 3, &mut rng(4));
        let dup = x.column(0).into_owned();
        x.set_column(2, &dup);
        let y = random(10, 3, &mut rng(5));
        let b = ViewBatch::new(x, y).unwrap();
        let err = fit_cca(&b, &CcaConfig { c: 2, reg: 0.0 }).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("r > 0")));
        assert!(fit_cca(&b, &CcaConfig { c: 2, reg: 1e-3 }).is_ok());
    }

    #[test]
    fn self_correlation_is_one() {
        let x = random(40, 4, &mut rng(6));
        let b = ViewBatch::new(x.clone(), x).unwrap();
        let res = fit_cca(&b, &CcaConfig { c: 4, reg: 0.0 }).unwrap();
        for r in &res.correlations {
            assert!((r - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn variates_match_reported_correlations_and_are_whitened() {
        let mut r = rng(7);
        let x = random(60, 4, &mut r);
        let y = &x.columns(0, 3) * random(3, 3, &mut r) + random(60, 3, &mut r) * 0.7;
        let b = ViewBatch::new(x, y).unwrap();
        let res = fit_cca(&b, &CcaConfig { c: 3, reg: 0.0 }).unwrap();
        assert!(res.correlations.windows(2).all(|w| w[0] >= w[1]));
        let cov = centered_covariances(&b, 0.0).unwrap();
        let vx = res.proj_x.transpose() * &cov.sxx * &res.proj_x;
        let vy = res.proj_y.transpose() * &cov.syy * &res.proj_y;
        assert!((vx - Matrix::identity(3, 3)).amax() < 1e-8);
        assert!((vy - Matrix::identity(3, 3)).amax() < 1e-8);
        let cross = res.proj_x.transpose() * &cov.sxy * &res.proj_y;
        for i in 0..3 {
            assert!((cross[(i, i)] - res.correlations[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let first = res.proj_x.column(i).iter().copied().find(|v| v.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn loss_is_negated_mean_correlation() {
        let mut r = rng(8);
        let b = ViewBatch::new(random(30, 5, &mut r), random(30, 4, &mut r)).unwrap();
        let cfg = CcaConfig { c: 3, reg: 1e-4 };
        let res = fit_cca(&b, &cfg).unwrap();
        assert_eq!(dcca_loss(&b, &cfg).unwrap(), -res.sum() / 3.0);
        assert_eq!(dcca_objective(&b, &cfg).unwrap().loss, dcca_loss(&b, &cfg).unwrap());
    }

    #[test]
    fn identical_views_loss_is_minus_one() {
        let x = random(50, 10, &mut rng(9));
        let b = ViewBatch::new(x.clone(), x).unwrap();
        let loss = dcca_loss(&b, &CcaConfig { c: 10, reg: 0.0 }).unwrap();
        assert!((loss + 1.0).abs() < 1e-8);
    }

    #[test]
    fn correlations_are_scale_invariant() {
        let mut r = rng(10);
        let x = random(25, 3, &mut r);
        let y = random(25, 3, &mut r) + &x * 0.5;
        let cfg = CcaConfig { c: 3, reg: 0.0 };
        let a = fit_cca(&ViewBatch::new(x.clone(), y.clone()).unwrap(), &cfg).unwrap();
        let b = fit_cca(&ViewBatch::new(x * 2.0, y * 2.0).unwrap(), &cfg).unwrap();
        for (p, q) in a.correlations.iter().zip(&b.correlations) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_vanishes_at_perfect_correlation() {
        let mut r = rng(11);
        let x = random(30, 4, &mut r);
        let q = random(4, 4, &mut r) + Matrix::identity(4, 4) * 3.0;
        let y = &x * q;
        let b = ViewBatch::new(x, y).unwrap();
        let obj = dcca_objective(&b, &CcaConfig { c: 4, reg: 0.0 }).unwrap();
        assert!((obj.loss + 1.0).abs() < 1e-8);
        let norm = (obj.grad_x.norm_squared() + obj.grad_y.norm_squared()).sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn json_has_correlations() {
        let mut r = rng(12);
        let b = ViewBatch::new(random(10, 2, &mut r), random(10, 2, &mut r)).unwrap();
        let res = fit_cca(&b, &CcaConfig { c: 2, reg: 0.0 }).unwrap();
        let v = res.to_json();
        assert_eq!(v["correlations"].as_array().unwrap().len(), 2);
        assert_eq!(v["proj_x"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn branch_parameter_count() {
        let cfg = DccaBranchConfig::default();
        let net = build_dcca_subnet(4096, &cfg, &mut rng(0)).unwrap();
        let expected = 4096 * 1024 + 1024 + 2 * (1024 * 1024 + 1024) + 1024 * 10 + 10;
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn branch_output_narrower_than_c_rejected() {
        let cfg = DccaBranchConfig { hidden_width: 8, output_width: 4, ..Default::default() };
        assert!(build_dcca_branch(5, 5, &cfg, 10, &mut rng(0)).is_err());
        assert!(build_dcca_branch(5, 5, &cfg, 4, &mut rng(0)).is_ok());
    }

    #[test]
    fn identically_seeded_branches_agree() {
        let cfg = DccaBranchConfig { hidden_width: 16, ..Default::default() };
        let (fx, _) = build_dcca_branch(6, 6, &cfg, 10, &mut rng(5)).unwrap();
        let (gx, _) = build_dcca_branch(6, 6, &cfg, 10, &mut rng(5)).unwrap();
        let input = Tensor::new(vec![3, 6], (0..18).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert_eq!(fx.infer(&input).unwrap(), gx.infer(&input).unwrap());
    }
}
