use serde::{Deserialize, Serialize};

use crate::maps::ActionMap;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerConfig {
    /// Step size `ν`.
    pub nu: f64,
    /// Number of forward steps `T`.
    pub steps: usize,
}

impl EulerConfig {
    pub fn new(nu: f64, steps: usize) -> Result<Self> {
        let cfg = EulerConfig { nu, steps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Input(format!("step size {} must be positive", self.nu)));
        }
        Ok(())
    }
}

/// States `x(0..=K)` and the actions `a(0..K)` between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nu: f64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn start(x0: &[f64], nu: f64) -> Self {
        Trajectory {
            nu,
            states: vec![x0.to_vec()],
            actions: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn first(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// `k · ν` for every state.
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| k as f64 * self.nu).collect()
    }
}

pub type Limits = [(f64, f64)];

/// One Euler step `x + ν f(x, a)`, optionally clamped to joint limits. This
/// is the single stepping routine shared by rollouts and live sessions.
pub fn step_state<M: ActionMap + ?Sized>(
    map: &M,
    x: &[f64],
    a: &[f64],
    nu: f64,
    limits: Option<&Limits>,
    step: usize,
) -> Result<Vec<f64>> {
    let f = map.decode(x, a)?;
    let mut next: Vec<f64> = x.iter().zip(&f).map(|(xi, fi)| xi + nu * fi).collect();
    if let Some(limits) = limits {
        for (v, (lo, hi)) in next.iter_mut().zip(limits) {
            *v = v.clamp(*lo, *hi);
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration { step });
    }
    Ok(next)
}

fn integrate<M: ActionMap + ?Sized>(
    map: &M,
    traj: &mut Trajectory,
    actions: &[Vec<f64>],
    limits: Option<&Limits>,
) -> Result<()> {
    for a in actions {
        let k = traj.steps();
        let next = step_state(map, traj.last(), a, traj.nu, limits, k)?;
        traj.actions.push(a.clone());
        traj.states.push(next);
    }
    Ok(())
}

/// Euler rollout of `actions` from `x0`; no state clamping.
pub fn rollout<M: ActionMap + ?Sized>(
    map: &M,
    x0: &[f64],
    actions: &[Vec<f64>],
    cfg: &EulerConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if actions.len() != cfg.steps {
        return Err(Error::Input(format!(
            "{} actions for a {}-step rollout",
            actions.len(),
            cfg.steps
        )));
    }
    rollout_clamped(map, x0, actions, cfg.nu, None)
}

/// Rollout with optional joint-limit clamping after every step.
pub fn rollout_clamped<M: ActionMap + ?Sized>(
    map: &M,
    x0: &[f64],
    actions: &[Vec<f64>],
    nu: f64,
    limits: Option<&Limits>,
) -> Result<Trajectory> {
    EulerConfig { nu, steps: 0 }.validate()?;
    if x0.len() != map.state_dim() {
        return Err(Error::Shape(format!(
            "initial state of length {}, map expects {}",
            x0.len(),
            map.state_dim()
        )));
    }
    let mut traj = Trajectory::start(x0, nu);
    integrate(map, &mut traj, actions, limits)?;
    Ok(traj)
}

/// `out[j] = −actions[T − 1 − j]`.
pub fn mirror_actions(actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    actions
        .iter()
        .rev()
        .map(|a| a.iter().map(|v| -v).collect())
        .collect()
}

/// Forward `T` steps, then the mirrored sequence for `T` more; returns
/// `‖x(0) − x(2T)‖₂` and the full trajectory.
pub fn reversal_error<M: ActionMap + ?Sized>(
    map: &M,
    x0: &[f64],
    actions: &[Vec<f64>],
    cfg: &EulerConfig,
) -> Result<(f64, Trajectory)> {
    let mut traj = rollout(map, x0, actions, cfg)?;
    integrate(map, &mut traj, &mirror_actions(actions), None)?;
    Ok((distance(traj.first(), traj.last()), traj))
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Result of one `a` then `−a` step pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleStep {
    /// `‖x_i − x_{i+2}‖`
    pub lhs: f64,
    /// `‖x_{i+1} − x_i‖`
    pub rhs: f64,
    /// `lhs / rhs`, or 0 when `rhs = 0`.
    pub ratio: f64,
}

pub fn single_step_check<M: ActionMap + ?Sized>(map: &M, x: &[f64], a: &[f64], nu: f64) -> Result<SingleStep> {
    EulerConfig { nu, steps: 0 }.validate()?;
    let x1 = step_state(map, x, a, nu, None, 0)?;
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let x2 = step_state(map, &x1, &neg, nu, None, 1)?;
    let lhs = distance(x, &x2);
    let rhs = distance(&x1, x);
    Ok(SingleStep {
        lhs,
        rhs,
        ratio: if rhs == 0.0 { 0.0 } else { lhs / rhs },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;

    /// `f(x, a) = a`.
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
    fn hand_euler_steps() {
        let cfg = EulerConfig::new(0.5, 2).unwrap();
        let t = rollout(&Identity, &[0.0, 0.0], &[vec![1.0, 0.0], vec![1.0, 0.0]], &cfg).unwrap();
        assert_eq!(t.states, vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]]);
        assert_eq!(t.times(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn empty_rollout() {
        let t = rollout(&Identity, &[0.3, 0.1], &[], &EulerConfig::new(0.1, 0).unwrap()).unwrap();
        assert_eq!(t.states.len(), 1);
        assert_eq!(t.steps(), 0);
    }

    #[test]
    fn action_count_must_match() {
        assert!(rollout(&Identity, &[0.0, 0.0], &[vec![1.0, 0.0]], &EulerConfig::new(0.1, 2).unwrap()).is_err());
        assert!(EulerConfig::new(0.0, 1).is_err());
    }

    #[test]
    fn mirror_examples() {
        let s = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mirror_actions(&s), vec![vec![0.0, -1.0], vec![-1.0, 0.0]]);
        assert!(mirror_actions(&[]).is_empty());
        assert_eq!(mirror_actions(&mirror_actions(&s)), s);
    }

    #[test]
    fn state_independent_field_reverses_exactly() {
        let acts = vec![vec![0.3, -0.2], vec![1.0, 0.5], vec![-0.7, 0.25]];
        let (err, traj) = reversal_error(&Identity, &[0.1, 0.2], &acts, &EulerConfig::new(0.125, 3).unwrap()).unwrap();
        assert!(err <= 1e-12, "{err}");
        assert_eq!(traj.states.len(), 7);
    }

    #[test]
    fn single_step_cases() {
        let s = single_step_check(&Identity, &[0.0, 0.0], &[1.0, 1.0], 0.1).unwrap();
        assert_eq!(s.lhs, 0.0);
        let z = single_step_check(&Identity, &[0.0, 0.0], &[0.0, 0.0], 0.1).unwrap();
        assert_eq!((z.lhs, z.rhs, z.ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn clamped_steps_stay_inside() {
        let limits = [(-0.1, 0.1), (-1.0, 1.0)];
        let t = rollout_clamped(&Identity, &[0.0, 0.0], &vec![vec![1.0, 1.0]; 5], 0.1, Some(&limits)).unwrap();
        assert_eq!(t.last(), &[0.1, 0.5]);
    }
}
