//! Planar arm kinematics, synthetic demonstrations, preprocessing and greedy
//! simulated teleoperation.

mod arm;
mod demo;
mod teleop;

pub use arm::{ArmModel, Pose};
pub use demo::{
    arm_from_header, demo_seed, ema, generate_dataset, generate_demo, generate_demo_from,
    generate_demos, preprocess, sample_target, start_pose, DemoConfig, Demonstration,
    PreprocessConfig, STALL_PROGRESS, STALL_STEPS,
};
pub use teleop::{
    calibrate_nu, draw_actions, greedy_action, held_out_tasks, mean_distance_ratio, select_step_size, greedy_from_samples, path_via_points, sim_teleop,
    straight_via_points, GreedyChoice, TeleopOutcome, TeleopTask, DEFAULT_SAMPLES,
    DEFAULT_SWITCH_RADIUS, DEFAULT_VIA_SPACING,
};
