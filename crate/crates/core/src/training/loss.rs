use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::shape_err;
use crate::maps::{ActionMap, ActionModel};
use crate::Result;

/// `½‖ẋ − pred‖²`.
pub fn recon_loss(xdot: &[f64], pred: &[f64]) -> Result<f64> {
    if xdot.len() != pred.len() {
        return Err(shape_err(format!(
            "reconstruction of length {} against target of length {}",
            pred.len(),
            xdot.len()
        )));
    }
    Ok(0.5 * xdot.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Coefficients of the three reversibility terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerWeights {
    /// `‖−ẋ − f(x, −a)‖²`
    pub inverse: f64,
    /// `‖f(x, 0)‖²`
    pub zero_action: f64,
    /// `‖g(x, 0)‖²`
    pub zero_velocity: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        RegularizerWeights {
            inverse: 1.0,
            zero_action: 1.0,
            zero_velocity: 1.0,
        }
    }
}

impl RegularizerWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.inverse, self.zero_action, self.zero_velocity]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(crate::Error::Config(format!(
                "regularizer weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted regularizer terms and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizerTerms {
    pub inverse: f64,
    pub zero_action: f64,
    pub zero_velocity: f64,
    pub total: f64,
}

fn sq(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|e| e * e).sum()
}

/// Reversibility regularizer at one sample, with `a = g(x, ẋ)`.
pub fn reversibility_regularizer<F, G>(
    f: &F,
    g: G,
    x: &[f64],
    xdot: &[f64],
    weights: &RegularizerWeights,
) -> Result<RegularizerTerms>
where
    F: ActionMap + ?Sized,
    G: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    let a = g(x, xdot)?;
    let neg_a: Vec<f64> = a.iter().map(|v| -v).collect();
    let back = f.decode(x, &neg_a)?;
    let rest = f.decode(x, &vec![0.0; f.action_dim()])?;
    let still = g(x, &vec![0.0; xdot.len()])?;
    if back.len() != xdot.len() {
        return Err(shape_err("decoder output and velocity differ in length"));
    }
    let inverse = sq(xdot.iter().zip(&back).map(|(v, b)| -v - b));
    let zero_action = sq(rest);
    let zero_velocity = sq(still);
    Ok(RegularizerTerms {
        inverse,
        zero_action,
        zero_velocity,
        total: weights.inverse * inverse
            + weights.zero_action * zero_action
            + weights.zero_velocity * zero_velocity,
    })
}

/// Regularizer terms of a model averaged over a batch (weights all 1 in
/// `total`).
pub fn mean_regularizer(model: &ActionModel, states: &Matrix, velocities: &Matrix) -> Result<RegularizerTerms> {
    let rows = states.nrows();
    if rows == 0 {
        return Ok(RegularizerTerms::default());
    }
    let a = model.encode_batch(states, velocities)?;
    let back = model.decode_batch(states, &a.mapv(|v| -v))?;
    let rest = model.decode_batch(states, &Array2::zeros(a.dim()))?;
    let still = model.encode_batch(states, &Array2::zeros(velocities.dim()))?;
    let m = rows as f64;
    let inverse = sq((velocities + &back).iter().copied()) / m;
    let zero_action = sq(rest.iter().copied()) / m;
    let zero_velocity = sq(still.iter().copied()) / m;
    Ok(RegularizerTerms {
        inverse,
        zero_action,
        zero_velocity,
        total: inverse + zero_action + zero_velocity,
    })
}

/// Tape handles of the batch objective.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
}

/// Records the mean batch objective: reconstruction, plus the three
/// regularizer terms when `weights` is given. Velocity residuals are measured
/// in units of the per-joint velocity RMS. The extra passes evaluate the
/// negated codes, the zero action and the zero velocity on the same states.
pub fn record_loss(
    model: &ActionModel,
    tape: &mut Tape<'_>,
    states: &Matrix,
    velocities: &Matrix,
    weights: Option<&RegularizerWeights>,
) -> Result<LossVars> {
    let x = tape.constant(states.clone());
    let v = tape.constant(velocities.clone());
    let target = standardized(model, velocities);
    let a = model.record_encoder(tape, x, v)?;
    let pred = model.record_decoder(tape, x, a)?;
    let pred = model.standardize(tape, pred)?;
    let recon = tape.sq_dist_mean(pred, &target, 0.5)?;
    let Some(w) = weights else {
        return Ok(LossVars { total: recon, recon });
    };
    let mut total = recon;
    if w.inverse > 0.0 {
        let neg = tape.neg(a);
        let back = model.record_decoder(tape, x, neg)?;
        let back = model.standardize(tape, back)?;
        let term = tape.sq_dist_mean(back, &target.mapv(|e| -e), w.inverse)?;
        total = tape.add(total, term)?;
    }
    if w.zero_action > 0.0 {
        let zero = tape.constant(Array2::zeros((states.nrows(), model.arch.action_dim)));
        let rest = model.record_decoder(tape, x, zero)?;
        let rest = model.standardize(tape, rest)?;
        let term = tape.sq_norm_mean(rest, w.zero_action)?;
        total = tape.add(total, term)?;
    }
    if w.zero_velocity > 0.0 {
        let zero = tape.constant(Array2::zeros(velocities.dim()));
        let still = model.record_encoder(tape, x, zero)?;
        let term = tape.sq_norm_mean(still, w.zero_velocity)?;
        total = tape.add(total, term)?;
    }
    Ok(LossVars { total, recon })
}

fn standardized(model: &ActionModel, velocities: &Matrix) -> Matrix {
    let mut out = velocities.clone();
    for mut row in out.rows_mut() {
        for (v, r) in row.iter_mut().zip(&model.norm.velocity_rms) {
            *v /= r;
        }
    }
    out
}

/// Mean squared reconstruction error per entry, the tabulated regression
/// metric.
pub fn reconstruction_mse(model: &ActionModel, states: &Matrix, velocities: &Matrix) -> Result<f64> {
    if states.nrows() == 0 {
        return Err(crate::Error::Input("empty evaluation set".into()));
    }
    let a = model.encode_batch(states, velocities)?;
    let pred = model.decode_batch(states, &a)?;
    Ok(sq((&pred - velocities).iter().copied()) / velocities.len() as f64)
}
