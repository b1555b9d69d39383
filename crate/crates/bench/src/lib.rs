//! Shared fixtures for the kernel benchmarks.

use maada_core::data::{gen_two_moons, rotate, Dataset, Domain};
use maada_core::trainer::TrainConfig;

/// Labeled two-moons source and its unlabeled rotated copy.
pub fn moons_pair(n: usize, degrees: f64, seed: u64) -> (Dataset, Dataset) {
    let s = gen_two_moons(n, 0.1, seed).expect("valid generator args");
    let t = gen_two_moons(n, 0.1, seed + 1).expect("valid generator args");
    let t = rotate(&t, degrees.to_radians(), Some(Domain::Target), true).expect("2-d data");
    (s, t)
}

/// Default configuration shortened to a fixed number of epochs.
pub fn short_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}
