//! Thin helpers over nalgebra's symmetric eigensolver.

use nalgebra::{DMatrix, DVector};

use crate::tensor::Tensor;

pub(crate) type Matrix = DMatrix<f64>;

pub(crate) fn matrix_from_tensor(t: &Tensor) -> Matrix {
    let (rows, cols) = (t.batch(), t.row_len());
    Matrix::from_row_slice(rows, cols, t.data())
}

pub(crate) fn tensor_from_matrix(m: &Matrix) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter());
    }
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("matrix dims are positive")
}

pub(crate) fn column_means(h: &Matrix) -> DVector<f64> {
    let m = h.nrows() as f64;
    DVector::from_iterator(h.ncols(), h.column_iter().map(|c| c.sum() / m))
}

/// Subtracts each column's mean.
pub(crate) fn center_columns(h: &Matrix) -> Matrix {
    let means = column_means(h);
    let mut out = h.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
pub(crate) fn sym_eigen_desc(s: &Matrix) -> (Vec<f64>, Matrix) {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Floor applied to eigenvalues before taking inverse square roots.
pub(crate) const EIGEN_FLOOR: f64 = 1e-12;

/// `S^{-1/2}` through the eigendecomposition, with eigenvalues floored at
/// [`EIGEN_FLOOR`]. Also returns the unfloored eigenvalues.
pub(crate) fn inv_sqrt(s: &Matrix) -> (Matrix, Vec<f64>) {
    let (values, vectors) = sym_eigen_desc(s);
    let scaled = Matrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&l| 1.0 / l.max(EIGEN_FLOOR).sqrt()),
    ));
    (&vectors * scaled * vectors.transpose(), values)
}
