use serde::{Deserialize, Serialize};

use super::chart::{tangent_basis, TangentChart};
use super::geodesic::geodesic_to_set;
use super::graph::build_graph;
use crate::error::{Error, Result};
use crate::gradcore::{sq_dist, Matrix};

/// Directed geodesic discrepancy from a source cloud to a target cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoDBreakdown {
    /// Max over source points of the graph-geodesic distance to the nearest
    /// target point.
    pub supinf: f64,
    /// Mean normalized projector distance between the tangent charts of each
    /// source point and its Euclidean-nearest target point, in `[0, 1]`.
    pub curvgap: f64,
    /// Median edge weight of the joint graph; converts `curvgap` to length
    /// units.
    pub scale: f64,
    /// `supinf + curvgap * scale`
    pub total: f64,
}

/// Charts for every row of `x` using its own k-NN graph.
pub fn charts_for(x: &Matrix, k: usize, m: usize) -> Result<Vec<TangentChart>> {
    let g = build_graph(x, k)?;
    (0..x.rows()).map(|i| tangent_basis(x, &g, i, m)).collect()
}

/// `|P_a - P_b|_F / sqrt(2m)` for two charts of equal dimension.
pub fn projector_distance(a: &TangentChart, b: &TangentChart) -> f64 {
    let pa = a.projector();
    let pb = b.projector();
    let diff = pa.zip_with(&pb, "projector_distance", |x, y| x - y).expect("same ambient dimension");
    diff.frobenius_norm() / (2.0 * a.dim() as f64).sqrt()
}

/// Source-to-target geodesic discrepancy. Geodesics run on one k-NN graph
/// over both clouds; each cloud is charted on its own graph.
pub fn geo_discrepancy(xs: &Matrix, xt: &Matrix, k: usize, m: usize) -> Result<GeoDBreakdown> {
    if xs.rows() == 0 || xt.rows() == 0 {
        return Err(Error::Data("geo_discrepancy needs two nonempty clouds".into()));
    }
    if xs.cols() != xt.cols() {
        return Err(Error::dim(
            "geo_discrepancy",
            format!("source has {} features, target {}", xs.cols(), xt.cols()),
        ));
    }
    if m > xs.cols() {
        return Err(Error::Config(format!("tangent dimension m = {m} exceeds ambient dimension {}", xs.cols())));
    }
    let ns = xs.rows();
    let joint = xs.vstack(xt)?;
    let graph = build_graph(&joint, k)?;
    let targets: Vec<usize> = (ns..joint.rows()).collect();
    let to_target = geodesic_to_set(&graph, &targets)?;

    let nearest: Vec<(usize, f64)> = (0..ns)
        .map(|i| {
            let xi = xs.row(i);
            let mut best = (0, f64::INFINITY);
            for j in 0..xt.rows() {
                let d = sq_dist(xi, xt.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect();

    // A source point that coincides with a target point is at distance zero,
    // not at the duplicate-edge weight.
    let supinf = (0..ns)
        .map(|i| if nearest[i].1 == 0.0 { 0.0 } else { to_target[i] })
        .fold(0.0, f64::max);

    let src_charts = charts_for(xs, k, m)?;
    let tgt_graph = build_graph(xt, k)?;
    let mut gap = 0.0;
    for (i, chart) in src_charts.iter().enumerate() {
        let tc = tangent_basis(xt, &tgt_graph, nearest[i].0, m)?;
        gap += projector_distance(chart, &tc);
    }
    let curvgap = gap / ns as f64;
    let scale = graph.median_edge_weight();
    Ok(GeoDBreakdown {
        supinf,
        curvgap,
        scale,
        total: supinf + curvgap * scale,
    })
}
