use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bounded symmetric latent action domain `[-c, c]^n`, plus a norm clamp
/// applied at deployment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub dim: usize,
    pub bound: f64,
    pub max_norm: f64,
}

impl ActionSpace {
    pub fn new(dim: usize, bound: f64, max_norm: f64) -> Result<Self> {
        let space = ActionSpace {
            dim,
            bound,
            max_norm,
        };
        space.validate()?;
        Ok(space)
    }

    /// `[-1, 1]^n` with the norm clamp at `√n` (a no-op on the box).
    pub fn unit_box(dim: usize) -> Self {
        ActionSpace {
            dim,
            bound: 1.0,
            max_norm: (dim as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("action dimension must be at least 1".into()));
        }
        if !(self.bound > 0.0) || !(self.max_norm > 0.0) {
            return Err(Error::Config(format!(
                "action bound ({}) and max norm ({}) must be positive",
                self.bound, self.max_norm
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, a: &[f64]) -> Vec<f64> {
        clamp_action(self, a)
    }
}

/// Componentwise clamp to `[-c, c]`, then rescale onto the `max_norm` ball if
/// needed. Idempotent.
pub fn clamp_action(space: &ActionSpace, a: &[f64]) -> Vec<f64> {
    let c = space.bound;
    let mut out: Vec<f64> = a.iter().map(|v| v.clamp(-c, c)).collect();
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > space.max_norm {
        let s = space.max_norm / norm;
        out.iter_mut().for_each(|v| *v *= s);
    }
    out
}
