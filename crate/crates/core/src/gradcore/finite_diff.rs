use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Evaluation(format!(
                "function value is not finite near flat index {i}"
            )));
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||, tiny)`, the comparison used by the
/// gradient checks.
pub fn relative_l2_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Matrix::row_vector(&[3.0]);
        let g = finite_diff_grad(|m| Ok(m.data().iter().map(|v| v * v).sum()), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let x = Matrix::row_vector(&[1.0, -4.0, 0.5]);
        let g = finite_diff_grad(|_| Ok(2.5), &x, 1e-5).unwrap();
        assert!(g.max_abs() < 1e-9);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let x = Matrix::row_vector(&[0.0]);
        let r = finite_diff_grad(|m| Ok(if m.data()[0] > 0.0 { f64::INFINITY } else { 1.0 }), &x, 1e-5);
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }

    #[test]
    fn rejects_bad_step() {
        let x = Matrix::row_vector(&[0.0]);
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
    }
}
