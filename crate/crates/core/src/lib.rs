//! Learning, constraining and certifying state-conditioned action maps for
//! low-dimensional teleoperation.

pub mod autodiff;
pub mod checks;
pub mod data;
mod error;
pub mod maps;
pub mod reversibility;
pub mod sim;
pub mod training;

pub use autodiff::{Activation, Matrix};
pub use error::{Error, Result};
pub use maps::{ActionMap, ActionModel, ActionSpace, Architecture, Family, Normalization};
