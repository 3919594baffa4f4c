//! Shared fixtures for the benchmarks.

use latentmap::data::{split_dataset, Split};
use latentmap::sim::{generate_dataset, ArmModel, DemoConfig, PreprocessConfig};
use latentmap::{ActionModel, Architecture, Family, Matrix, Normalization};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small planar dataset split the standard way.
pub fn planar_split() -> Split {
    let arm = ArmModel::planar5();
    let demo = DemoConfig { steps: 300, ..DemoConfig::default() };
    let data = generate_dataset(&arm, 4, &demo, &PreprocessConfig::default(), 1).expect("dataset");
    split_dataset(&data, (0.9, 0.05, 0.05), 0).expect("split")
}

/// An untrained model of the default architecture fitted to `split`.
pub fn model(family: Family, split: &Split) -> ActionModel {
    let arch = Architecture::new(family, split.train.state_dim(), 2);
    let norm = Normalization::fit(&split.train.states, &split.train.velocities);
    ActionModel::new(arch, norm, 0).expect("model")
}

/// Uniform actions in `[-1, 1]^n`.
pub fn actions(rows: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, n), |_| rng.random_range(-1.0..1.0))
}
