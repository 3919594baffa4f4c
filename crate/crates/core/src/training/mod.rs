//! Losses, the mini-batch training loop and the Lipschitz projection.

mod lipschitz;
mod loss;
mod trainer;

pub use lipschitz::{
    effective_weight, implied_bound, layer_bounds, lipschitz_project, project_layers, LayerProjection,
    LipschitzConfig, Projector, PROJECTION_MIN_ITERATIONS,
};
pub use loss::{
    mean_regularizer, recon_loss, reconstruction_mse, record_loss, reversibility_regularizer,
    LossVars, RegularizerTerms, RegularizerWeights,
};
pub use trainer::{train, train_observed, EpochStats, StepInfo, TrainConfig, TrainReport};
