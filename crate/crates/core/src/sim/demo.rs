use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arm::ArmModel;
use crate::autodiff::Matrix;
use crate::data::Dataset;
use crate::{Error, Result};

/// Settings for synthetic straight-line reaching demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    /// Raw samples per demonstration.
    pub steps: usize,
    /// Damped-least-squares damping.
    pub damping: f64,
    /// Null-space gain pulling joints towards the middle of their range.
    pub limit_avoidance: f64,
    /// Minimum distance, as a fraction of reach, between the base and the
    /// straight end-effector path.
    pub base_clearance: f64,
    /// IK iterations per waypoint.
    pub ik_iterations: usize,
    /// Targets must lie within `reach − margin`.
    pub margin: f64,
    /// Amplitude of the seeded perturbation of the home pose.
    pub start_jitter: f64,
    /// Target annulus as fractions of the total reach.
    pub target_annulus: (f64, f64),
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            steps: 1000,
            damping: 0.05,
            limit_avoidance: 0.1,
            base_clearance: 0.15,
            ik_iterations: 4,
            margin: 1e-3,
            start_jitter: 0.1,
            target_annulus: (0.3, 0.85),
        }
    }
}

/// Progress below this for [`STALL_STEPS`] consecutive waypoints is a stall.
pub const STALL_PROGRESS: f64 = 1e-8;
pub const STALL_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    /// Joint states, one row per raw sample.
    pub states: Matrix,
    pub target: [f64; 2],
    pub seed: u64,
}

/// Home pose perturbed by a seeded uniform jitter, clamped to the limits.
pub fn start_pose(arm: &ArmModel, jitter: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51a7_u64);
    let home = arm.home();
    let q: Vec<f64> = home
        .iter()
        .map(|h| if jitter > 0.0 { h + rng.random_range(-jitter..jitter) } else { *h })
        .collect();
    arm.clamp(&q)
}

/// Target drawn uniformly (by area) from the configured annulus.
/// Uniform target in the configured annulus whose straight path from the
/// seeded start pose keeps the base clearance.
pub fn sample_target(arm: &ArmModel, cfg: &DemoConfig, seed: u64) -> Result<[f64; 2]> {
    const ATTEMPTS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a6e_u64);
    let start = arm.forward_kinematics(&start_pose(arm, cfg.start_jitter, seed))?.ee;
    let (lo, hi) = cfg.target_annulus;
    let (r0, r1) = (lo * arm.reach(), hi * arm.reach());
    for _ in 0..ATTEMPTS {
        let r = rng.random_range(r0 * r0..=r1 * r1).sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let target = [r * theta.cos(), r * theta.sin()];
        if segment_to_origin(start, target) >= cfg.base_clearance * arm.reach() {
            return Ok(target);
        }
    }
    Err(Error::Degenerate(format!(
        "no target in {ATTEMPTS} draws keeps a base clearance of {}",
        cfg.base_clearance
    )))
}

fn segment_to_origin(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (-(a[0] * dx + a[1] * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a[0] + t * dx).hypot(a[1] + t * dy)
}

fn dls_step(arm: &ArmModel, q: &[f64], err: [f64; 2], cfg: &DemoConfig) -> Result<Vec<f64>> {
    let j = arm.jacobian(q)?;
    let mut jjt = j.dot(&j.t());
    jjt[(0, 0)] += cfg.damping * cfg.damping;
    jjt[(1, 1)] += cfg.damping * cfg.damping;
    let det = jjt[(0, 0)] * jjt[(1, 1)] - jjt[(0, 1)] * jjt[(1, 0)];
    let solve = |e: [f64; 2]| {
        let y0 = (jjt[(1, 1)] * e[0] - jjt[(0, 1)] * e[1]) / det;
        let y1 = (-jjt[(1, 0)] * e[0] + jjt[(0, 0)] * e[1]) / det;
        j.t().dot(&Array1::from(vec![y0, y1]))
    };
    let mut dq = solve(err);
    if cfg.limit_avoidance > 0.0 {
        let z: Array1<f64> = q
            .iter()
            .zip(&arm.limits)
            .map(|(v, (lo, hi))| -cfg.limit_avoidance * (v - 0.5 * (lo + hi)) / (hi - lo))
            .collect();
        let jz = j.dot(&z);
        dq = dq + &z - solve([jz[0], jz[1]]);
    }
    Ok(arm.clamp(&q.iter().zip(dq.iter()).map(|(a, b)| a + b).collect::<Vec<_>>()))
}

/// Damped-least-squares tracking of straight end-effector waypoints from
/// the pose of `start` to `target`. Joint limits are enforced by clamping.
pub fn generate_demo_from(
    arm: &ArmModel,
    start: &[f64],
    target: [f64; 2],
    cfg: &DemoConfig,
) -> Result<Demonstration> {
    arm.validate()?;
    if cfg.steps < 2 {
        return Err(Error::Input("a demonstration needs at least two samples".into()));
    }
    let reach = (target[0] * target[0] + target[1] * target[1]).sqrt();
    if !(reach <= arm.reach() - cfg.margin) {
        return Err(Error::Input(format!(
            "target at distance {reach:.4} is outside the usable reach {:.4}",
            arm.reach() - cfg.margin
        )));
    }
    let mut q = arm.clamp(start);
    let p0 = arm.forward_kinematics(&q)?.ee;
    let mut states = Array2::zeros((cfg.steps, arm.dof()));
    states.row_mut(0).assign(&Array1::from(q.clone()));
    let mut stalled = 0;
    for k in 1..cfg.steps {
        let t = k as f64 / (cfg.steps - 1) as f64;
        let goal = [p0[0] + t * (target[0] - p0[0]), p0[1] + t * (target[1] - p0[1])];
        let before = arm.forward_kinematics(&q)?.ee;
        for _ in 0..cfg.ik_iterations {
            let ee = arm.forward_kinematics(&q)?.ee;
            let err = [goal[0] - ee[0], goal[1] - ee[1]];
            if err[0].hypot(err[1]) < 1e-12 {
                break;
            }
            q = dls_step(arm, &q, err, cfg)?;
        }
        let after = arm.forward_kinematics(&q)?.ee;
        let residual = (goal[0] - after[0]).hypot(goal[1] - after[1]);
        let moved = (after[0] - before[0]).hypot(after[1] - before[1]);
        if residual > 1e-6 && moved < STALL_PROGRESS {
            stalled += 1;
            if stalled >= STALL_STEPS {
                return Err(Error::Degenerate(format!(
                    "inverse kinematics stalled at sample {k}, {residual:.3e} m from the waypoint"
                )));
            }
        } else {
            stalled = 0;
        }
        states.row_mut(k).assign(&Array1::from(q.clone()));
    }
    Ok(Demonstration {
        states,
        target,
        seed: 0,
    })
}

/// Demonstration from the seeded start pose towards `target`.
pub fn generate_demo(arm: &ArmModel, target: [f64; 2], cfg: &DemoConfig, seed: u64) -> Result<Demonstration> {
    let start = start_pose(arm, cfg.start_jitter, seed);
    let mut demo = generate_demo_from(arm, &start, target, cfg)?;
    demo.seed = seed;
    Ok(demo)
}

/// Filtering and subsampling of raw joint sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Weight of the new sample: `y_t = γ x_t + (1 − γ) y_{t−1}`.
    pub gamma: f64,
    pub stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { gamma: 0.2, stride: 3 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) || self.stride == 0 {
            return Err(Error::Config(format!(
                "preprocessing needs 0 < γ < 1 and stride ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Exponential moving average with `y_0 = x_0`.
pub fn ema(states: &Matrix, gamma: f64) -> Matrix {
    let mut out = states.clone();
    for t in 1..out.nrows() {
        for j in 0..out.ncols() {
            out[(t, j)] = gamma * states[(t, j)] + (1.0 - gamma) * out[(t - 1, j)];
        }
    }
    out
}

/// EMA filter, keep every `stride`-th state, and pair each kept state with
/// the difference to the next kept one.
pub fn preprocess(states: &Matrix, cfg: &PreprocessConfig) -> Result<Dataset> {
    cfg.validate()?;
    if states.nrows() <= cfg.stride {
        return Err(Error::Input(format!(
            "demonstration of {} samples is too short for stride {}",
            states.nrows(),
            cfg.stride
        )));
    }
    let filtered = ema(states, cfg.gamma);
    let kept: Vec<usize> = (0..filtered.nrows()).step_by(cfg.stride).collect();
    let pairs = kept.len() - 1;
    let d = states.ncols();
    let mut xs = Array2::zeros((pairs, d));
    let mut vs = Array2::zeros((pairs, d));
    for (i, w) in kept.windows(2).enumerate() {
        xs.row_mut(i).assign(&filtered.row(w[0]));
        vs.row_mut(i).assign(&(&filtered.row(w[1]) - &filtered.row(w[0])));
    }
    Dataset::new(xs, vs)
}

/// Derives the seed of demonstration `index` from a root seed.
pub fn demo_seed(root: u64, index: usize) -> u64 {
    let mut z = root ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` seeded demonstrations.
pub fn generate_demos(arm: &ArmModel, count: usize, cfg: &DemoConfig, seed: u64) -> Result<Vec<Demonstration>> {
    if count == 0 {
        return Err(Error::Input("demonstration count must be at least 1".into()));
    }
    (0..count)
        .map(|i| {
            let s = demo_seed(seed, i);
            generate_demo(arm, sample_target(arm, cfg, s)?, cfg, s)
        })
        .collect()
}

/// Demonstrations preprocessed and stacked into one dataset with a
/// descriptive header.
pub fn generate_dataset(
    arm: &ArmModel,
    count: usize,
    cfg: &DemoConfig,
    pre: &PreprocessConfig,
    seed: u64,
) -> Result<Dataset> {
    let demos = generate_demos(arm, count, cfg, seed)?;
    let mut data = Dataset::new(Array2::zeros((0, arm.dof())), Array2::zeros((0, arm.dof())))?;
    for demo in &demos {
        data.extend(&preprocess(&demo.states, pre)?)?;
    }
    let join = |v: Vec<String>| v.join(";");
    Ok(data
        .with_header("action_source", "finite-difference")
        .with_header("gamma", pre.gamma)
        .with_header("stride", pre.stride)
        .with_header("trajectories", count)
        .with_header("raw_steps", cfg.steps)
        .with_header("seed", seed)
        .with_header("arm_links", join(arm.links.iter().map(|l| format!("{l:?}")).collect()))
        .with_header(
            "arm_limits",
            join(arm.limits.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect()),
        ))
}

/// Parses the arm stored in a dataset header, if present.
pub fn arm_from_header(data: &Dataset) -> Result<Option<ArmModel>> {
    let (Some(links), Some(limits)) = (data.header_value("arm_links"), data.header_value("arm_limits")) else {
        return Ok(None);
    };
    let bad = |what: &str| Error::Parse(format!("malformed arm {what} in dataset header"));
    let links = links
        .split(';')
        .map(|s| s.parse::<f64>().map_err(|_| bad("links")))
        .collect::<Result<Vec<_>>>()?;
    let limits = limits
        .split(';')
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| bad("limits"))?;
            Ok((a.parse().map_err(|_| bad("limits"))?, b.parse().map_err(|_| bad("limits"))?))
        })
        .collect::<Result<Vec<_>>>()?;
    ArmModel::new(links, limits).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ema_hand_value() {
        let f = ema(&array![[0.0], [1.0]], 0.2);
        assert!((f[(1, 0)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_has_zero_velocity() {
        let s = Array2::from_elem((10, 3), 0.7);
        let d = preprocess(&s, &PreprocessConfig::default()).unwrap();
        assert!(d.velocities.iter().all(|v| *v == 0.0));
        assert!(d.states.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn stride_pairs() {
        let s = Array2::from_shape_fn((7, 1), |(i, _)| (i * i) as f64);
        let d = preprocess(&s, &PreprocessConfig { gamma: 0.999_999_999, stride: 3 }).unwrap();
        assert_eq!(d.len(), 2);
        let filtered = ema(&s, 0.999_999_999);
        assert_eq!(d.states[(1, 0)], filtered[(3, 0)]);
        assert_eq!(d.velocities[(1, 0)], filtered[(6, 0)] - filtered[(3, 0)]);
    }

    #[test]
    fn short_demo_rejected() {
        assert!(matches!(
            preprocess(&Array2::zeros((3, 2)), &PreprocessConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_motion_demo() {
        let arm = ArmModel::planar5();
        let cfg = DemoConfig { steps: 20, ..Default::default() };
        let start = start_pose(&arm, 0.1, 3);
        let ee = arm.forward_kinematics(&start).unwrap().ee;
        let demo = generate_demo_from(&arm, &start, ee, &cfg).unwrap();
        for r in demo.states.rows() {
            assert_eq!(r.to_vec(), start);
        }
    }

    #[test]
    fn unreachable_target() {
        let arm = ArmModel::planar5();
        assert!(matches!(
            generate_demo(&arm, [2.0, 0.0], &DemoConfig::default(), 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn header_arm_round_trip() {
        let arm = ArmModel::planar5();
        let cfg = DemoConfig { steps: 10, ..Default::default() };
        let d = generate_dataset(&arm, 2, &cfg, &PreprocessConfig::default(), 1).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(arm_from_header(&d).unwrap(), Some(arm));
    }
}
