//! Encoders, decoder families and their linearization.

mod action_map;
mod checkpoint;
mod linearize;
mod mlp;
mod model;
mod space;

pub use action_map::{operator_norms, ActionMap, Jacobians, FD_STEP};
pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use linearize::{jacobian_at_zero, linearization_gap, LinearizationRecord, DIRECTIONS_PER_STATE};
pub use mlp::Mlp;
pub use model::{
    ActionModel, Architecture, Decoder, Deployed, Family, Normalization, ProjectedLayer,
    GRAM_SCHMIDT_TOL,
};
pub use space::{clamp_action, ActionSpace};
