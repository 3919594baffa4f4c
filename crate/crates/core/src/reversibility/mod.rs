//! Euler rollouts, mirrored replay, reversal-error bounds and the estimators
//! feeding them.

mod bounds;
mod estimate;
mod euler;
mod experiment;

pub use bounds::{bound_corollary, reversal_bounds, ReversalBounds};
pub use estimate::{estimate_bounds, BoundEstimates, EstimationBudget, Region, Witness};
pub use euler::{
    distance, mirror_actions, reversal_error, rollout, rollout_clamped, single_step_check,
    step_state, EulerConfig, Limits, SingleStep, Trajectory,
};
pub use experiment::{
    convergence_study, empirical_order, integral_steps, mean_stderr, reports_to_csv,
    reversibility_experiment, unit_direction, BoundReport, ConvergenceRow, ExperimentConfig,
    BOUND_CSV_HEADER,
};
