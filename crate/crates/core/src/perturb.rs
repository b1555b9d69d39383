//! On/off-manifold split of a loss gradient and the perturbed samples built
//! from it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcore::norm;
use crate::manifold::TangentChart;

/// Directions with a norm below this are not normalized; the corresponding
/// perturbation is skipped instead.
pub const DEFAULT_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationPair {
    pub anchor: Vec<f64>,
    pub delta_on: Vec<f64>,
    pub delta_off: Vec<f64>,
    pub x_on: Vec<f64>,
    pub x_off: Vec<f64>,
    pub on_skipped: bool,
    pub off_skipped: bool,
}

/// Splits `g` into its tangent projection and the remainder
/// `g - delta_on`.
pub fn decompose(g: &[f64], chart: &TangentChart) -> Result<(Vec<f64>, Vec<f64>)> {
    if g.len() != chart.ambient_dim() {
        return Err(Error::dim(
            "decompose",
            format!("gradient of length {} for a chart in R^{}", g.len(), chart.ambient_dim()),
        ));
    }
    let on = chart.project(g)?;
    let off = g.iter().zip(&on).map(|(a, b)| a - b).collect();
    Ok((on, off))
}

fn step(x: &[f64], dir: &[f64], size: f64, floor: f64) -> (Vec<f64>, bool) {
    let n = norm(dir);
    if n < floor || n == 0.0 {
        return (x.to_vec(), true);
    }
    let s = size / n;
    (x.iter().zip(dir).map(|(a, d)| a + s * d).collect(), false)
}

/// `x_on = x + alpha * delta_on / |delta_on|` and likewise for `x_off` with
/// `beta`. A direction whose norm is below `norm_floor` leaves the point
/// unchanged and sets the matching `*_skipped` flag.
pub fn make_pair(
    x: &[f64],
    delta_on: &[f64],
    delta_off: &[f64],
    alpha: f64,
    beta: f64,
    norm_floor: f64,
) -> Result<PerturbationPair> {
    if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("step sizes must be finite and >= 0, got alpha = {alpha}, beta = {beta}")));
    }
    if delta_on.len() != x.len() || delta_off.len() != x.len() {
        return Err(Error::dim(
            "make_pair",
            format!("point of length {}, deltas of length {} and {}", x.len(), delta_on.len(), delta_off.len()),
        ));
    }
    let (x_on, on_skipped) = step(x, delta_on, alpha, norm_floor);
    let (x_off, off_skipped) = step(x, delta_off, beta, norm_floor);
    Ok(PerturbationPair {
        anchor: x.to_vec(),
        delta_on: delta_on.to_vec(),
        delta_off: delta_off.to_vec(),
        x_on,
        x_off,
        on_skipped,
        off_skipped,
    })
}

/// Decomposes `g` against `chart` and builds the pair in one call.
pub fn perturb_point(
    x: &[f64],
    g: &[f64],
    chart: &TangentChart,
    alpha: f64,
    beta: f64,
    norm_floor: f64,
) -> Result<PerturbationPair> {
    let (on, off) = decompose(g, chart)?;
    make_pair(x, &on, &off, alpha, beta, norm_floor)
}
