use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::Dataset;
use crate::maps::{clamp_action, ActionMap, ActionSpace};
use crate::reversibility::{distance, step_state, Trajectory};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_SWITCH_RADIUS: f64 = 0.05;
pub const DEFAULT_VIA_SPACING: f64 = 0.1;

/// The sample minimizing the one-step objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyChoice {
    pub action: Vec<f64>,
    pub index: usize,
    pub objective: f64,
}

/// Evaluates `‖x★ − x − ν f(x, a)‖²` for every row of `samples` and returns
/// the first minimizer.
pub fn greedy_from_samples<M: ActionMap + ?Sized>(
    map: &M,
    x: &[f64],
    target: &[f64],
    nu: f64,
    samples: &Matrix,
) -> Result<GreedyChoice> {
    if samples.nrows() == 0 {
        return Err(Error::Input("greedy selection needs at least one sample".into()));
    }
    if target.len() != x.len() {
        return Err(Error::Shape("target and state differ in length".into()));
    }
    let f = map.decode_at(x, samples)?;
    let mut best = GreedyChoice {
        action: samples.row(0).to_vec(),
        index: 0,
        objective: f64::INFINITY,
    };
    for (i, row) in f.rows().into_iter().enumerate() {
        let obj: f64 = row
            .iter()
            .zip(x)
            .zip(target)
            .map(|((fi, xi), ti)| {
                let r = ti - xi - nu * fi;
                r * r
            })
            .sum();
        if obj < best.objective || (i == 0 && !best.objective.is_finite()) {
            best = GreedyChoice {
                action: samples.row(i).to_vec(),
                index: i,
                objective: obj,
            };
        }
    }
    Ok(best)
}

/// `k` standard-normal draws, clamped into `space` when `clamp` is set.
pub fn draw_actions(rng: &mut ChaCha8Rng, space: &ActionSpace, k: usize, clamp: bool) -> Matrix {
    let mut out = Array2::zeros((k, space.dim));
    for mut r in out.rows_mut() {
        let a: Vec<f64> = (0..space.dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let a = if clamp { clamp_action(space, &a) } else { a };
        r.assign(&Array1::from(a));
    }
    out
}

/// One greedy step with `k` fresh draws from a seeded generator.
#[allow(clippy::too_many_arguments)]
pub fn greedy_action<M: ActionMap + ?Sized>(
    map: &M,
    x: &[f64],
    target: &[f64],
    nu: f64,
    k: usize,
    space: &ActionSpace,
    clamp: bool,
    seed: u64,
) -> Result<GreedyChoice> {
    if k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    greedy_from_samples(map, x, target, nu, &draw_actions(&mut rng, space, k, clamp))
}

/// A goal-reaching run for the greedy controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopTask {
    pub start: Vec<f64>,
    pub target: Vec<f64>,
    /// Intermediate goals, ordered from the start towards the target.
    pub via_points: Vec<Vec<f64>>,
    pub nu: f64,
    pub samples: usize,
    pub budget: usize,
    pub switch_radius: f64,
    pub clamp: bool,
    /// Offer the zero action alongside the random draws.
    pub hold_candidate: bool,
    /// Move on to the next via-point once holding beats every draw.
    pub advance_on_stall: bool,
}

impl TeleopTask {
    pub fn new(start: Vec<f64>, target: Vec<f64>, nu: f64, budget: usize) -> Self {
        TeleopTask {
            start,
            target,
            via_points: Vec::new(),
            nu,
            samples: DEFAULT_SAMPLES,
            budget,
            switch_radius: DEFAULT_SWITCH_RADIUS,
            clamp: true,
            hold_candidate: true,
            advance_on_stall: true,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.start.len() != state_dim
            || self.target.len() != state_dim
            || self.via_points.iter().any(|v| v.len() != state_dim)
        {
            return Err(Error::Shape(format!("task states must have dimension {state_dim}")));
        }
        if self.budget == 0 || self.samples == 0 {
            return Err(Error::Input("budget and sample count must be at least 1".into()));
        }
        if !(self.nu > 0.0) || !(self.switch_radius >= 0.0) {
            return Err(Error::Input("step size must be positive, switch radius non-negative".into()));
        }
        Ok(())
    }

    /// Via-points followed by the target.
    pub fn goals(&self) -> Vec<&[f64]> {
        self.via_points
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.target.as_slice()))
            .collect()
    }
}

/// Points along the straight joint-space segment every `spacing` of length,
/// excluding both ends.
pub fn straight_via_points(start: &[f64], target: &[f64], spacing: f64) -> Vec<Vec<f64>> {
    let len = distance(start, target);
    if !(spacing > 0.0) || len <= spacing {
        return Vec::new();
    }
    let count = (len / spacing).ceil() as usize;
    (1..count)
        .map(|i| {
            let t = i as f64 / count as f64;
            start.iter().zip(target).map(|(s, g)| s + t * (g - s)).collect()
        })
        .collect()
}

/// States of a reference path taken every `spacing` of accumulated
/// joint-space arc length, excluding the final state.
pub fn path_via_points(path: &Matrix, spacing: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if path.nrows() < 2 || !(spacing > 0.0) {
        return out;
    }
    let mut acc = 0.0;
    for k in 1..path.nrows() - 1 {
        acc += distance(&path.row(k).to_vec(), &path.row(k - 1).to_vec());
        if acc >= spacing {
            out.push(path.row(k).to_vec());
            acc = 0.0;
        }
    }
    out
}

/// Goal-reaching tasks on held-out data. `data` holds equally long
/// trajectories back to back (its `trajectories` header gives the count) and
/// `test_rows` are rows withheld from training. Task `k` starts at the first
/// sample of trajectory `k mod m` and targets one of its withheld samples,
/// the latest one on the first pass, earlier ones on later passes, with
/// via-points along the recorded path in between.
pub fn held_out_tasks(
    data: &Dataset,
    test_rows: &[usize],
    count: usize,
    nu: f64,
    budget: usize,
    spacing: f64,
) -> Result<Vec<TeleopTask>> {
    let trajectories: usize = data
        .header_value("trajectories")
        .ok_or_else(|| Error::Input("dataset header lacks a trajectory count".into()))?
        .parse()
        .map_err(|_| Error::Input("trajectory count in the header is not an integer".into()))?;
    if trajectories == 0 || !data.len().is_multiple_of(trajectories) {
        return Err(Error::Input(format!(
            "{} samples do not split into {trajectories} equal trajectories",
            data.len()
        )));
    }
    let per = data.len() / trajectories;
    let mut withheld: Vec<Vec<usize>> = vec![Vec::new(); trajectories];
    for &r in test_rows {
        if r >= data.len() {
            return Err(Error::Input(format!("test row {r} is out of range")));
        }
        if r % per > 0 {
            withheld[r / per].push(r);
        }
    }
    for w in &mut withheld {
        w.sort_unstable_by(|a, b| b.cmp(a));
    }
    let mut tasks = Vec::with_capacity(count);
    for k in 0..count {
        let (traj, pass) = (k % trajectories, k / trajectories);
        let target = *withheld[traj].get(pass).ok_or_else(|| {
            Error::Input(format!("trajectory {traj} has too few withheld samples for {count} tasks"))
        })?;
        let first = traj * per;
        let path = data.states.slice(ndarray::s![first..=target, ..]).to_owned();
        let mut task = TeleopTask::new(
            data.states.row(first).to_vec(),
            data.states.row(target).to_vec(),
            nu,
            budget,
        );
        task.via_points = path_via_points(&path, spacing);
        tasks.push(task);
    }
    Ok(tasks)
}

/// Step size that makes a unit action move the state as far as a typical
/// demonstrated step: median `‖ẋ‖` over median `‖f(x, ±eᵢ)‖`.
pub fn calibrate_nu<M: ActionMap + ?Sized>(map: &M, states: &Matrix, velocities: &Matrix) -> Result<f64> {
    if states.nrows() == 0 || velocities.nrows() == 0 {
        return Err(Error::Input("calibration needs at least one sample".into()));
    }
    let n = map.action_dim();
    let norm = |r: ndarray::ArrayView1<f64>| r.dot(&r).sqrt();
    let mut speeds: Vec<f64> = velocities.rows().into_iter().map(norm).collect();
    let rows = states.nrows() * 2 * n;
    let xs = Array2::from_shape_fn((rows, states.ncols()), |(r, j)| states[(r / (2 * n), j)]);
    let acts = Array2::from_shape_fn((rows, n), |(r, j)| {
        let k = r % (2 * n);
        match (k / 2 == j, k % 2) {
            (true, 0) => 1.0,
            (true, _) => -1.0,
            _ => 0.0,
        }
    });
    let mut gains: Vec<f64> = map.decode_batch(&xs, &acts)?.rows().into_iter().map(norm).collect();
    let (v, g) = (median(&mut speeds), median(&mut gains));
    if !(v > 0.0 && g > 0.0 && (v / g).is_finite()) {
        return Err(Error::Degenerate(format!(
            "cannot calibrate a step size from speed {v:e} and gain {g:e}"
        )));
    }
    Ok(v / g)
}

/// Mean of `final / initial` distance over `tasks`, each run with step size
/// `nu` and seed `seed + index`. Tasks that start on their target count as 0.
pub fn mean_distance_ratio<M: ActionMap + ?Sized>(
    map: &M,
    tasks: &[TeleopTask],
    nu: f64,
    space: &ActionSpace,
    limits: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Input("no tasks to evaluate".into()));
    }
    let mut total = 0.0;
    for (i, task) in tasks.iter().enumerate() {
        let task = TeleopTask { nu, ..task.clone() };
        let out = sim_teleop(map, &task, space, limits, seed.wrapping_add(i as u64))?;
        if out.initial_distance > 0.0 {
            total += out.final_distance / out.initial_distance;
        }
    }
    Ok(total / tasks.len() as f64)
}

/// The candidate step size with the lowest [`mean_distance_ratio`] on
/// `tasks` (first on ties), with its score.
pub fn select_step_size<M: ActionMap + ?Sized>(
    map: &M,
    tasks: &[TeleopTask],
    candidates: &[f64],
    space: &ActionSpace,
    limits: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &nu in candidates {
        let score = mean_distance_ratio(map, tasks, nu, space, limits, seed)?;
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((nu, score));
        }
    }
    best.ok_or_else(|| Error::Input("no candidate step sizes".into()))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopOutcome {
    pub trajectory: Trajectory,
    /// Distance to each via-point when it was passed (or at the end of the
    /// run if it never was).
    pub via_distances: Vec<f64>,
    /// Distance to the active goal before every step.
    pub active_distances: Vec<f64>,
    /// Index of the active goal before every step.
    pub active_goals: Vec<usize>,
    pub initial_distance: f64,
    pub final_distance: f64,
}

impl TeleopOutcome {
    /// Fraction of steps that did not increase the distance to the goal that
    /// was active at the time.
    pub fn nonincreasing_fraction(&self) -> f64 {
        let goals = self.active_goals.len();
        if goals == 0 {
            return 1.0;
        }
        let mut ok = 0;
        for k in 0..goals {
            let after = if k + 1 < goals && self.active_goals[k + 1] == self.active_goals[k] {
                self.active_distances[k + 1]
            } else {
                ok += 1;
                continue;
            };
            if after <= self.active_distances[k] {
                ok += 1;
            }
        }
        ok as f64 / goals as f64
    }
}

/// Greedy teleoperation: every step draws `samples` actions, applies the
/// best one for the active goal, and advances to the next goal within the
/// switch radius. States are clamped to `limits` if given.
pub fn sim_teleop<M: ActionMap + ?Sized>(
    map: &M,
    task: &TeleopTask,
    space: &ActionSpace,
    limits: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<TeleopOutcome> {
    task.validate(map.state_dim())?;
    let goals = task.goals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Trajectory::start(&task.start, task.nu);
    let mut active = 0;
    let mut via_distances = vec![f64::NAN; task.via_points.len()];
    let mut active_distances = Vec::with_capacity(task.budget);
    let mut active_goals = Vec::with_capacity(task.budget);
    for step in 0..task.budget {
        let x = traj.last().to_vec();
        while active + 1 < goals.len() && distance(&x, goals[active]) <= task.switch_radius {
            via_distances[active] = distance(&x, goals[active]);
            active += 1;
        }
        active_goals.push(active);
        active_distances.push(distance(&x, goals[active]));
        let mut samples = draw_actions(&mut rng, space, task.samples, task.clamp);
        if task.hold_candidate {
            samples = ndarray::concatenate![ndarray::Axis(0), Array2::zeros((1, space.dim)), samples];
        }
        let mut choice = greedy_from_samples(map, &x, goals[active], task.nu, &samples)?;
        let stalled = task.hold_candidate && choice.index == 0;
        if stalled && task.advance_on_stall && active + 1 < goals.len() {
            via_distances[active] = distance(&x, goals[active]);
            active += 1;
            choice = greedy_from_samples(map, &x, goals[active], task.nu, &samples)?;
        }
        let next = step_state(map, &x, &choice.action, task.nu, limits, step)?;
        traj.actions.push(choice.action);
        traj.states.push(next);
    }
    for (i, d) in via_distances.iter_mut().enumerate() {
        if d.is_nan() {
            *d = distance(traj.last(), goals[i]);
        }
    }
    Ok(TeleopOutcome {
        initial_distance: distance(&task.start, &task.target),
        final_distance: distance(traj.last(), &task.target),
        trajectory: traj,
        via_distances,
        active_distances,
        active_goals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Identity;

    impl ActionMap for Identity {
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn decode_batch(&self, _x: &Matrix, a: &Matrix) -> Result<Matrix> {
            Ok(a.clone())
        }
    }

    #[test]
    fn picks_the_exact_action() {
        let samples = array![[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]];
        let c = greedy_from_samples(&Identity, &[0.0, 0.0], &[1.0, 0.0], 1.0, &samples).unwrap();
        assert_eq!(c.action, vec![1.0, 0.0]);
        assert_eq!(c.index, 1);
        assert_eq!(c.objective, 0.0);
    }

    #[test]
    fn at_target_prefers_the_smallest_effect() {
        let samples = array![[0.5, 0.5], [0.1, 0.0], [-0.3, 0.0]];
        let c = greedy_from_samples(&Identity, &[0.2, 0.2], &[0.2, 0.2], 1.0, &samples).unwrap();
        assert_eq!(c.index, 1);
    }

    #[test]
    fn single_sample_is_returned() {
        let space = ActionSpace::unit_box(2);
        let c = greedy_action(&Identity, &[0.0, 0.0], &[5.0, 5.0], 0.1, 1, &space, true, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(c.action, draw_actions(&mut rng, &space, 1, true).row(0).to_vec());
        assert!(greedy_action(&Identity, &[0.0, 0.0], &[5.0, 5.0], 0.1, 0, &space, true, 9).is_err());
    }

    #[test]
    fn straight_via_point_spacing() {
        let v = straight_via_points(&[0.0, 0.0], &[1.2, 0.0], 0.5);
        assert_eq!(v.len(), 2);
        assert!((v[0][0] - 0.4).abs() < 1e-15 && (v[1][0] - 0.8).abs() < 1e-15);
        assert!(straight_via_points(&[0.0], &[0.3], 0.5).is_empty());
    }

    #[test]
    fn start_at_target() {
        let task = TeleopTask::new(vec![0.3, 0.3], vec![0.3, 0.3], 0.1, 5);
        let out = sim_teleop(&Identity, &task, &ActionSpace::unit_box(2), None, 1).unwrap();
        assert_eq!(out.initial_distance, 0.0);
        assert_eq!(out.final_distance, 0.0);
        assert!(out.trajectory.actions.iter().all(|a| a == &vec![0.0, 0.0]));
    }

    #[test]
    fn linear_field_reaches_goal() {
        let mut task = TeleopTask::new(vec![0.0, 0.0], vec![1.0, -0.5], 0.05, 200);
        task.via_points = straight_via_points(&task.start, &task.target, 0.5);
        let out = sim_teleop(&Identity, &task, &ActionSpace::unit_box(2), None, 2).unwrap();
        assert!(out.final_distance <= 0.1 * out.initial_distance);
        assert!(out.nonincreasing_fraction() >= 0.9);
    }
}
