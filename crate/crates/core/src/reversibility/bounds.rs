use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reversal-error bounds after `T` forward and `T` mirrored steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalBounds {
    /// `Mν((1 + Lν)^T − 1)`
    pub tight: f64,
    /// `νM(e^{TLν} − 1)`
    pub exponential: f64,
}

fn check_common(nu: f64, m: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Input(format!("step size {nu} must be positive")));
    }
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::Input(format!("velocity bound {m} must be non-negative")));
    }
    Ok(())
}

/// Both closed forms. `L = 0` gives zero (the limit of either form).
pub fn reversal_bounds(nu: f64, m: f64, l: f64, steps: usize) -> Result<ReversalBounds> {
    check_common(nu, m)?;
    if !(l >= 0.0) || !l.is_finite() {
        return Err(Error::Input(format!("Lipschitz constant {l} must be non-negative")));
    }
    let t = steps as f64;
    let z = l * nu;
    Ok(ReversalBounds {
        tight: scaled_growth(m * nu, t * z.ln_1p()),
        exponential: scaled_growth(nu * m, t * z),
    })
}

/// `(νM + E/L)(e^{TLν} − 1)`; requires `L > 0`.
pub fn bound_corollary(nu: f64, m: f64, l: f64, e: f64, steps: usize) -> Result<f64> {
    check_common(nu, m)?;
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Input(format!(
            "the residual bound needs a positive Lipschitz constant, got {l}"
        )));
    }
    if !(e >= 0.0) || !e.is_finite() {
        return Err(Error::Input(format!("residual bound {e} must be non-negative")));
    }
    Ok(scaled_growth(nu * m + e / l, steps as f64 * l * nu))
}

/// `c (e^z − 1)`, zero whenever `c` is, even if the growth overflows.
fn scaled_growth(c: f64, z: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * z.exp_m1()
    }
}
