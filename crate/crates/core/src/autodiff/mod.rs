//! Minimal reverse-mode core: parameters, a batched gradient tape, dense and
//! tensor layers, odd activations, Adam, and spectral norms.

mod activation;
mod adam;
pub mod gradcheck;
mod layers;
pub mod linalg;
mod params;
mod tape;

pub use activation::Activation;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{DenseLayer, TensorLayer};
pub use linalg::{gram_schmidt, spectral_norm, PowerIteration};
pub use params::{Matrix, Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
