//! Dense matrices, a replayable reverse-mode tape, a finite-difference
//! oracle, and a small symmetric eigensolver.

mod eigen;
mod finite_diff;
mod matrix;
mod tape;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use finite_diff::{finite_diff_grad, relative_l2_error};
pub use matrix::{dot, norm, sq_dist, Matrix};
pub use tape::{Evaluation, Gradients, Inputs, Tape, Var};
