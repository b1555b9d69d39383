use serde::Serialize;

use super::graph::NeighborGraph;
use crate::error::{Error, Result};
use crate::gradcore::{symmetric_eigen, Matrix};

/// Eigenvalues at or below this fraction of the largest one count as zero
/// when deciding the numerical rank of a neighborhood.
const RANK_TOLERANCE: f64 = 1e-10;

/// Local-PCA estimate of the tangent space at one point.
#[derive(Clone, Debug, Serialize)]
pub struct TangentChart {
    pub anchor: usize,
    /// `d x m`, orthonormal columns.
    pub basis: Matrix,
    /// The `k` nearest neighbors that, together with the anchor, formed the
    /// local sample.
    pub neighbors: Vec<usize>,
    /// Leading `min(d, k)` covariance eigenvalues, descending.
    pub spectrum: Vec<f64>,
    /// Set when `m` exceeds the numerical rank of the neighborhood; the
    /// trailing columns then come from the null space.
    pub rank_deficient: bool,
}

impl TangentChart {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    /// `U^T v`
    pub fn coordinates(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ambient_dim() {
            return Err(Error::dim(
                "project_tangent",
                format!("vector of length {} for a chart in R^{}", v.len(), self.ambient_dim()),
            ));
        }
        Ok((0..self.dim())
            .map(|c| (0..v.len()).map(|r| self.basis.get(r, c) * v[r]).sum())
            .collect())
    }

    /// `U U^T v`
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let coef = self.coordinates(v)?;
        Ok((0..self.ambient_dim())
            .map(|r| coef.iter().enumerate().map(|(c, a)| self.basis.get(r, c) * a).sum())
            .collect())
    }

    /// The `d x d` orthogonal projector `U U^T`.
    pub fn projector(&self) -> Matrix {
        self.basis
            .matmul(&self.basis.transpose())
            .expect("basis shapes always chain")
    }
}

/// Projects `v` onto the tangent space of `chart`.
pub fn project_tangent(chart: &TangentChart, v: &[f64]) -> Result<Vec<f64>> {
    chart.project(v)
}

/// Top-`m` eigenvectors of the covariance of the anchor and its `k`
/// nearest neighbors. Each column is signed so its largest-magnitude entry
/// is positive.
pub fn tangent_basis(x: &Matrix, graph: &NeighborGraph, i: usize, m: usize) -> Result<TangentChart> {
    let d = x.cols();
    if graph.n() != x.rows() {
        return Err(Error::dim(
            "tangent_basis",
            format!("graph over {} points, data has {}", graph.n(), x.rows()),
        ));
    }
    if i >= x.rows() {
        return Err(Error::Config(format!("anchor {i} out of range for {} points", x.rows())));
    }
    let max_m = d.min(graph.k());
    if m == 0 || m > max_m {
        return Err(Error::Config(format!("tangent dimension m = {m} must be in [1, min(d, k) = {max_m}]")));
    }

    let neighbors = graph.neighbors(i).to_vec();
    let members: Vec<usize> = std::iter::once(i).chain(neighbors.iter().copied()).collect();
    let count = members.len() as f64;
    let mut mean = vec![0.0; d];
    for &j in &members {
        for (mu, v) in mean.iter_mut().zip(x.row(j)) {
            *mu += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= count);

    let mut cov = Matrix::zeros(d, d);
    for &j in &members {
        let c: Vec<f64> = x.row(j).iter().zip(&mean).map(|(v, mu)| v - mu).collect();
        for r in 0..d {
            for s in r..d {
                let v = cov.get(r, s) + c[r] * c[s];
                cov.set(r, s, v);
            }
        }
    }
    for r in 0..d {
        for s in r..d {
            let v = cov.get(r, s) / count;
            cov.set(r, s, v);
            cov.set(s, r, v);
        }
    }

    let eig = symmetric_eigen(&cov)?;
    let top = eig.values[0].max(0.0);
    let rank = eig.values.iter().filter(|&&v| v > RANK_TOLERANCE * top && top > 0.0).count();

    let mut basis = Matrix::zeros(d, m);
    for c in 0..m {
        let col = eig.vectors.col(c);
        let (mut best, mut best_abs) = (0, -1.0);
        for (r, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best = r;
                best_abs = v.abs();
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for (r, v) in col.iter().enumerate() {
            basis.set(r, c, sign * v);
        }
    }

    Ok(TangentChart {
        anchor: i,
        basis,
        neighbors,
        spectrum: eig.values.iter().take(d.min(graph.k())).map(|v| v.max(0.0)).collect(),
        rank_deficient: m > rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::build_graph;

    fn orthonormality_error(c: &TangentChart) -> f64 {
        let g = c.basis.transpose().matmul(&c.basis).unwrap();
        g.zip_with(&Matrix::identity(c.dim()), "t", |a, b| a - b).unwrap().max_abs()
    }

    #[test]
    fn x_axis_points() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.5, 0.0], [3.0, 0.0], [4.2, 0.0]]);
        let g = build_graph(&x, 3).unwrap();
        let c = tangent_basis(&x, &g, 2, 1).unwrap();
        assert!((c.basis.get(0, 0).abs() - 1.0).abs() < 1e-6);
        assert_eq!(c.basis.get(0, 0), 1.0);
        assert!(!c.rank_deficient);
    }

    #[test]
    fn rank_deficiency_is_flagged_and_padded() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let g = build_graph(&x, 2).unwrap();
        let c = tangent_basis(&x, &g, 1, 2).unwrap();
        assert!(c.rank_deficient);
        assert!(orthonormality_error(&c) < 1e-8);
    }

    #[test]
    fn sign_convention_and_spectrum() {
        let x = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, -2.0, 0.1], [2.0, -4.1, 0.0], [-1.0, 2.0, 0.05], [0.5, -1.0, -0.1]]);
        let g = build_graph(&x, 4).unwrap();
        let c = tangent_basis(&x, &g, 0, 2).unwrap();
        for col in 0..2 {
            let v = c.basis.col(col);
            let big = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
            assert!(big > 0.0);
        }
        assert_eq!(c.spectrum.len(), 3);
        assert!(c.spectrum.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.spectrum.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn m_bounds() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]]);
        let g = build_graph(&x, 1).unwrap();
        assert!(tangent_basis(&x, &g, 0, 0).is_err());
        assert!(tangent_basis(&x, &g, 0, 2).is_err()); // k = 1
        assert!(tangent_basis(&x, &g, 5, 1).is_err());
    }

    #[test]
    fn axis_projection() {
        let c = TangentChart {
            anchor: 0,
            basis: Matrix::col_vector(&[1.0, 0.0]),
            neighbors: vec![],
            spectrum: vec![],
            rank_deficient: false,
        };
        assert_eq!(project_tangent(&c, &[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert!(matches!(project_tangent(&c, &[1.0]), Err(Error::Dimension { .. })));
    }
}
