//! Manifold-aware adversarial data augmentation for domain transfer.
//!
//! The crate estimates tangent spaces of a point cloud with local PCA,
//! splits input gradients of a classifier's loss into on-manifold and
//! off-manifold parts, trains a small network under a four-term
//! geometry-aware objective, and reports every empirical term of the
//! resulting transfer bound.
//!
//! Modules, bottom up:
//!
//! - [`gradcore`]: dense matrices, a replayable reverse-mode tape, a
//!   finite-difference oracle and a symmetric eigensolver.
//! - [`model`]: the feed-forward classifier.
//! - [`manifold`]: k-NN graphs, tangent charts, graph geodesics and the
//!   geodesic discrepancy between two clouds.
//! - [`perturb`]: gradient decomposition and perturbed samples.
//! - [`losses`]: objective terms and their weighted total.
//! - [`data`]: synthetic generators and CSV I/O.
//! - [`trainer`]: the training loop and evaluation.
//! - [`analysis`]: risk split, consistency gap and bound report.

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcore;
pub mod losses;
pub mod manifold;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod trainer;

pub use analysis::{BoundReport, RiskSplit};
pub use data::{Dataset, Domain};
pub use error::{Error, Result};
pub use gradcore::Matrix;
pub use losses::{LossBreakdown, LossWeights};
pub use manifold::{GeoDBreakdown, NeighborGraph, TangentChart};
pub use model::ModelParams;
pub use perturb::PerturbationPair;
pub use trainer::{MetricsLog, TrainConfig};
