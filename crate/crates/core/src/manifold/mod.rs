//! Manifold structure from point clouds: neighbor graphs, local-PCA tangent
//! charts, graph geodesics and the geodesic discrepancy between clouds.

mod chart;
mod discrepancy;
mod geodesic;
mod graph;

pub use chart::{project_tangent, tangent_basis, TangentChart};
pub use discrepancy::{charts_for, geo_discrepancy, projector_distance, GeoDBreakdown};
pub use geodesic::{geodesic_from, geodesic_to_set};
pub use graph::{build_graph, NeighborGraph, DUPLICATE_EDGE_WEIGHT};
