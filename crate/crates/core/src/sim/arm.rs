use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::shape_err;
use crate::{Error, Result};

/// Planar serial chain rooted at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub links: Vec<f64>,
    /// `(lower, upper)` per joint, radians.
    pub limits: Vec<(f64, f64)>,
}

/// End-effector position and every joint position from the base outwards
/// (`d + 1` points, the last being the end effector).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub ee: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

impl ArmModel {
    pub fn new(links: Vec<f64>, limits: Vec<(f64, f64)>) -> Result<Self> {
        let arm = ArmModel { links, limits };
        arm.validate()?;
        Ok(arm)
    }

    /// Five links of 0.3, 0.25, 0.2, 0.15 and 0.1 m with ±2.5 rad limits.
    pub fn planar5() -> Self {
        ArmModel {
            links: vec![0.3, 0.25, 0.2, 0.15, 0.1],
            limits: vec![(-2.5, 2.5); 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.len() < 2 {
            return Err(Error::Config("an arm needs at least two joints".into()));
        }
        if self.limits.len() != self.links.len() {
            return Err(Error::Config(format!(
                "{} links but {} joint limits",
                self.links.len(),
                self.limits.len()
            )));
        }
        if self.links.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.limits.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config("joint limits must be finite with lower < upper".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn reach(&self) -> f64 {
        self.links.iter().sum()
    }

    /// A bent rest configuration inside the limits, scaled to the joint count.
    pub fn home(&self) -> Vec<f64> {
        const BASE: [f64; 5] = [0.3, 0.5, 0.4, 0.3, 0.2];
        (0..self.dof())
            .map(|i| {
                let (lo, hi) = self.limits[i];
                BASE[i % BASE.len()].clamp(lo, hi)
            })
            .collect()
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(shape_err(format!(
                "{} joint values for a {}-joint arm",
                q.len(),
                self.dof()
            )));
        }
        Ok(())
    }

    /// `p_i = p_{i−1} + l_i (cos Σθ, sin Σθ)`.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose> {
        self.check(q)?;
        let mut points = Vec::with_capacity(q.len() + 1);
        let (mut x, mut y, mut angle) = (0.0, 0.0, 0.0);
        points.push([x, y]);
        for (l, t) in self.links.iter().zip(q) {
            angle += t;
            x += l * angle.cos();
            y += l * angle.sin();
            points.push([x, y]);
        }
        Ok(Pose { ee: [x, y], points })
    }

    /// `2 × d` positional Jacobian of the end effector.
    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix> {
        self.check(q)?;
        let d = q.len();
        let mut angles = Vec::with_capacity(d);
        let mut acc = 0.0;
        for t in q {
            acc += t;
            angles.push(acc);
        }
        let mut j = Array2::zeros((2, d));
        for i in 0..d {
            for k in i..d {
                j[(0, i)] -= self.links[k] * angles[k].sin();
                j[(1, i)] += self.links[k] * angles[k].cos();
            }
        }
        Ok(j)
    }

    pub fn clamp(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.limits)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.limits).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit5() -> ArmModel {
        ArmModel::new(vec![1.0; 5], vec![(-3.0, 3.0); 5]).unwrap()
    }

    #[test]
    fn straight_chain() {
        let pose = unit5().forward_kinematics(&[0.0; 5]).unwrap();
        assert_eq!(pose.ee, [5.0, 0.0]);
        assert_eq!(pose.points.len(), 6);
    }

    #[test]
    fn rotated_chain() {
        let pose = unit5().forward_kinematics(&[FRAC_PI_2, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(pose.ee[0].abs() < 1e-15 && (pose.ee[1] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_differences() {
        let arm = ArmModel::planar5();
        let q = [0.2, -0.4, 0.9, 0.1, -1.2];
        let j = arm.jacobian(&q).unwrap();
        for i in 0..5 {
            let mut p = q;
            let mut m = q;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fp = arm.forward_kinematics(&p).unwrap().ee;
            let fm = arm.forward_kinematics(&m).unwrap().ee;
            for r in 0..2 {
                assert!(((fp[r] - fm[r]) / 2e-6 - j[(r, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn invalid_arms() {
        assert!(ArmModel::new(vec![1.0], vec![(-1.0, 1.0)]).is_err());
        assert!(ArmModel::new(vec![1.0, -1.0], vec![(-1.0, 1.0); 2]).is_err());
        assert!(ArmModel::new(vec![1.0, 1.0], vec![(1.0, -1.0); 2]).is_err());
        assert!(ArmModel::planar5().forward_kinematics(&[0.0; 4]).is_err());
    }

    #[test]
    fn home_is_inside_limits() {
        let arm = ArmModel::planar5();
        assert!(arm.within_limits(&arm.home()));
        assert_eq!(arm.clamp(&[9.0, -9.0, 0.0, 0.0, 0.0])[..2], [2.5, -2.5]);
    }
}
