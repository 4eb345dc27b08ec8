//! Principal component analysis by exact symmetric eigendecomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, matrix_from_tensor, sym_eigen_desc, tensor_from_matrix};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pca {
    /// `[d, k]`, unit-norm columns.
    pub components: Tensor,
    /// `[n, k]`.
    pub projected: Tensor,
    pub means: Vec<f64>,
    /// Eigenvalues of the (n−1)-normalized covariance, descending.
    pub explained_variance: Vec<f64>,
}

/// Top-`k` principal components of the rows of `data` (`[n, d]`).
///
/// Each component is oriented so that its largest-magnitude entry is
/// positive.
pub fn pca_top_k(data: &Tensor, k: usize) -> Result<Pca> {
    if data.shape().len() != 2 {
        return Err(Error::input(format!("PCA expects an [n, d] matrix, got {:?}", data.shape())));
    }
    let (n, d) = (data.batch(), data.row_len());
    let limit = d.min(n.saturating_sub(1));
    if k == 0 || k > limit {
        return Err(Error::input(format!(
            "k = {k} must lie in 1..={limit} = min(n_images - 1, n_features) for {n}×{d} data"
        )));
    }
    if !data.is_finite() {
        return Err(Error::input("PCA input contains non-finite values"));
    }
    let x = matrix_from_tensor(data);
    let means = column_means(&x);
    let mut centered = x;
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let (values, vectors) = sym_eigen_desc(&cov);
    let mut comps = vectors.columns(0, k).into_owned();
    for mut col in comps.column_iter_mut() {
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let projected = &centered * &comps;
    Ok(Pca {
        components: tensor_from_matrix(&comps),
        projected: tensor_from_matrix(&projected),
        means: means.iter().copied().collect(),
        explained_variance: values[..k].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_variances() {
        // Columns with variances 4, 1, 0.25 (n-1 normalized) and zero cross terms.
        let base = [1.0, -1.0, 1.0, -1.0];
        let alt = [1.0, 1.0, -1.0, -1.0];
        let third = [1.0, -1.0, -1.0, 1.0];
        let s = (3.0f64 / 4.0).sqrt();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![2.0 * s * base[i], s * alt[i], 0.5 * s * third[i]])
            .collect();
        let pca = pca_top_k(&Tensor::from_rows(&rows).unwrap(), 2).unwrap();
        assert!((pca.explained_variance[0] - 4.0).abs() < 1e-12);
        assert!((pca.explained_variance[1] - 1.0).abs() < 1e-12);
        let c = pca.components.data();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_too_large() {
        let data = Tensor::zeros(&[5, 10]);
        assert!(matches!(pca_top_k(&data, 5), Err(Error::Input(_))));
        assert!(matches!(pca_top_k(&data, 0), Err(Error::Input(_))));
    }
}
