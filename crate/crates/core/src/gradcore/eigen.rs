//! Symmetric eigendecomposition for the small covariance matrices used by
//! the tangent-chart estimator, via nalgebra.

use nalgebra::DMatrix;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Eigenvalues in descending order and the matching unit eigenvectors as
/// the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("symmetric_eigen", format!("{:?} is not square", a.shape())));
    }
    let eig = DMatrix::from_row_slice(n, n, a.data()).symmetric_eigen();

    // Ties keep nalgebra's order so the result is reproducible.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, eig.eigenvectors[(k, src)]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}
