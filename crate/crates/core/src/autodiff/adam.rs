use serde::{Deserialize, Serialize};

use super::params::{Matrix, ParamStore};
use super::tape::Gradients;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators mirroring the shapes of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Matrix::zeros(p.value.dim()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are treated
/// as having a zero gradient. Nothing is modified if any gradient entry is
/// non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, store has {}",
            state.first.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        if let Some(g) = grads.param(id) {
            if g.dim() != params.get(id).dim() {
                return Err(Error::Shape(format!(
                    "gradient for '{}' has shape {:?}",
                    params.name(id),
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: params.name(id).to_string(),
                });
            }
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for id in params.ids() {
        let i = id.index();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let p = params.get_mut(id);
        match grads.param(id) {
            Some(g) => {
                ndarray::Zip::from(p)
                    .and(m)
                    .and(v)
                    .and(g)
                    .for_each(|p, m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    });
            }
            None => {
                ndarray::Zip::from(p).and(m).and(v).for_each(|p, m, v| {
                    *m *= beta1;
                    *v *= beta2;
                    *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                });
            }
        }
    }
    Ok(())
}
