use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::action_map::ActionMap;
use crate::autodiff::Matrix;
use crate::{Error, Result};

/// Random unit directions drawn per state.
pub const DIRECTIONS_PER_STATE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizationRecord {
    pub magnitude: f64,
    pub gap: f64,
}

/// `∂f/∂a` at `a = 0`.
pub fn jacobian_at_zero<M: ActionMap + ?Sized>(map: &M, x: &[f64]) -> Result<Matrix> {
    map.action_jacobian(x, &vec![0.0; map.action_dim()])
}

/// Mean of `‖f(x, m·u) − f(x, 0) − J(x)·m·u‖²` over the given states and
/// seeded unit directions `u`, for each magnitude `m`.
pub fn linearization_gap<M: ActionMap + ?Sized>(
    map: &M,
    states: &Matrix,
    magnitudes: &[f64],
    seed: u64,
) -> Result<Vec<LinearizationRecord>> {
    if states.nrows() == 0 {
        return Err(Error::Input("linearization needs at least one state".into()));
    }
    if magnitudes.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::Input("magnitudes must be non-negative".into()));
    }
    if magnitudes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("magnitudes must be sorted ascending".into()));
    }
    let n = map.action_dim();
    let batch = states.nrows();
    let zeros = Array2::zeros((batch, n));
    let base = map.decode_batch(states, &zeros)?;
    let jac = map.jacobians(states, &zeros)?.actions;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = DIRECTIONS_PER_STATE;
    let rows = batch * k;
    let mut dirs = Array2::<f64>::zeros((rows, n));
    for mut r in dirs.rows_mut() {
        loop {
            r.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = r.dot(&r).sqrt();
            if norm > 1e-12 {
                r.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    let xs = Array2::from_shape_fn((rows, states.ncols()), |(r, j)| states[(r / k, j)]);

    magnitudes
        .iter()
        .map(|&m| {
            if m == 0.0 {
                return Ok(LinearizationRecord { magnitude: m, gap: 0.0 });
            }
            let acts = &dirs * m;
            let out = map.decode_batch(&xs, &acts)?;
            let mut total = 0.0;
            for r in 0..rows {
                let s = r / k;
                let lin = jac[s].dot(&acts.row(r));
                for i in 0..out.ncols() {
                    let e = out[(r, i)] - base[(s, i)] - lin[i];
                    total += e * e;
                }
            }
            Ok(LinearizationRecord {
                magnitude: m,
                gap: total / rows as f64,
            })
        })
        .collect()
}
