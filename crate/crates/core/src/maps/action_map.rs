use ndarray::Array2;

use crate::autodiff::Matrix;
use crate::error::shape_err;
use crate::Result;

/// Central-difference step used by the default derivatives.
pub const FD_STEP: f64 = 1e-6;

/// Per-row Jacobians of a batch: `states[b]` is `d × d`, `actions[b]` is `d × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobians {
    pub states: Vec<Matrix>,
    pub actions: Vec<Matrix>,
}

/// A state-conditioned action map `f(x, a) → ẋ`.
///
/// Only `decode_batch` is required. Derivatives default to central
/// differences; learned decoders override them with reverse-mode passes.
pub trait ActionMap: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Decodes row `b` of `actions` at row `b` of `states`.
    fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix>;

    /// Both Jacobians at every row pair.
    fn jacobians(&self, states: &Matrix, actions: &Matrix) -> Result<Jacobians> {
        check_batch(self, states, actions)?;
        fd_jacobians(self, states, actions)
    }

    /// Row-wise vector-Jacobian products `(J_xᵀ c_b, J_aᵀ c_b)`.
    fn vjp_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
        cotangents: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        check_batch(self, states, actions)?;
        check_cotangents(self, states, cotangents)?;
        let jac = self.jacobians(states, actions)?;
        Ok(apply_vjp(&jac, cotangents))
    }

    /// Decodes every row of `actions` at the single state `x`.
    fn decode_at(&self, x: &[f64], actions: &Matrix) -> Result<Matrix> {
        let states = Array2::from_shape_fn((actions.nrows(), x.len()), |(_, j)| x[j]);
        self.decode_batch(&states, actions)
    }

    fn decode(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_point(self, x, a)?;
        let out = self.decode_batch(&row(x), &row(a))?;
        Ok(out.row(0).to_vec())
    }

    /// `∂f/∂a` at `(x, a)`, shape `d × n`.
    fn action_jacobian(&self, x: &[f64], a: &[f64]) -> Result<Matrix> {
        check_point(self, x, a)?;
        Ok(self.jacobians(&row(x), &row(a))?.actions.remove(0))
    }

    /// `∂f/∂x` at `(x, a)`, shape `d × d`.
    fn state_jacobian(&self, x: &[f64], a: &[f64]) -> Result<Matrix> {
        check_point(self, x, a)?;
        Ok(self.jacobians(&row(x), &row(a))?.states.remove(0))
    }

    fn vjp(&self, x: &[f64], a: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_point(self, x, a)?;
        let (gx, ga) = self.vjp_batch(&row(x), &row(a), &row(cotangent))?;
        Ok((gx.row(0).to_vec(), ga.row(0).to_vec()))
    }
}

macro_rules! forward_action_map {
    ($($ty:ty),*) => {$(
        impl<T: ActionMap + ?Sized> ActionMap for $ty {
            fn state_dim(&self) -> usize {
                (**self).state_dim()
            }
            fn action_dim(&self) -> usize {
                (**self).action_dim()
            }
            fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
                (**self).decode_batch(states, actions)
            }
            fn decode_at(&self, x: &[f64], actions: &Matrix) -> Result<Matrix> {
                (**self).decode_at(x, actions)
            }
            fn jacobians(&self, states: &Matrix, actions: &Matrix) -> Result<Jacobians> {
                (**self).jacobians(states, actions)
            }
            fn vjp_batch(
                &self,
                states: &Matrix,
                actions: &Matrix,
                cotangents: &Matrix,
            ) -> Result<(Matrix, Matrix)> {
                (**self).vjp_batch(states, actions, cotangents)
            }
        }
    )*};
}

forward_action_map!(&T, Box<T>, std::sync::Arc<T>);

pub(crate) fn row(v: &[f64]) -> Matrix {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

pub(crate) fn check_point<M: ActionMap + ?Sized>(map: &M, x: &[f64], a: &[f64]) -> Result<()> {
    if x.len() != map.state_dim() {
        return Err(shape_err(format!(
            "state of length {}, map expects {}",
            x.len(),
            map.state_dim()
        )));
    }
    if a.len() != map.action_dim() {
        return Err(shape_err(format!(
            "action of length {}, map expects {}",
            a.len(),
            map.action_dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_batch<M: ActionMap + ?Sized>(
    map: &M,
    states: &Matrix,
    actions: &Matrix,
) -> Result<()> {
    if states.ncols() != map.state_dim() || actions.ncols() != map.action_dim() {
        return Err(shape_err(format!(
            "batch of {}-dim states and {}-dim actions for a map over {} and {}",
            states.ncols(),
            actions.ncols(),
            map.state_dim(),
            map.action_dim()
        )));
    }
    if states.nrows() != actions.nrows() {
        return Err(shape_err(format!(
            "{} states paired with {} actions",
            states.nrows(),
            actions.nrows()
        )));
    }
    Ok(())
}

pub(crate) fn check_cotangents<M: ActionMap + ?Sized>(
    map: &M,
    states: &Matrix,
    cotangents: &Matrix,
) -> Result<()> {
    if cotangents.dim() != (states.nrows(), map.state_dim()) {
        return Err(shape_err(format!(
            "cotangents of shape {:?}, expected ({}, {})",
            cotangents.dim(),
            states.nrows(),
            map.state_dim()
        )));
    }
    Ok(())
}

pub(crate) fn apply_vjp(jac: &Jacobians, cotangents: &Matrix) -> (Matrix, Matrix) {
    let batch = cotangents.nrows();
    let d = jac.states.first().map_or(0, |m| m.ncols());
    let n = jac.actions.first().map_or(0, |m| m.ncols());
    let mut gx = Array2::zeros((batch, d));
    let mut ga = Array2::zeros((batch, n));
    for (b, c) in cotangents.rows().into_iter().enumerate() {
        gx.row_mut(b).assign(&jac.states[b].t().dot(&c));
        ga.row_mut(b).assign(&jac.actions[b].t().dot(&c));
    }
    (gx, ga)
}

/// Central differences with every perturbation decoded in a single batch.
pub(crate) fn fd_jacobians<M: ActionMap + ?Sized>(
    map: &M,
    states: &Matrix,
    actions: &Matrix,
) -> Result<Jacobians> {
    let (batch, d) = states.dim();
    let n = actions.ncols();
    let k = d + n;
    let rows = batch * 2 * k;
    let mut xs = Array2::zeros((rows, d));
    let mut acts = Array2::zeros((rows, n));
    for b in 0..batch {
        for p in 0..2 * k {
            let r = b * 2 * k + p;
            xs.row_mut(r).assign(&states.row(b));
            acts.row_mut(r).assign(&actions.row(b));
            let sign = if p % 2 == 0 { FD_STEP } else { -FD_STEP };
            let j = p / 2;
            if j < d {
                xs[(r, j)] += sign;
            } else {
                acts[(r, j - d)] += sign;
            }
        }
    }
    let out = map.decode_batch(&xs, &acts)?;
    let m = out.ncols();
    let mut jac = Jacobians {
        states: Vec::with_capacity(batch),
        actions: Vec::with_capacity(batch),
    };
    for b in 0..batch {
        let mut full = Array2::zeros((m, k));
        for j in 0..k {
            let plus = out.row(b * 2 * k + 2 * j);
            let minus = out.row(b * 2 * k + 2 * j + 1);
            for i in 0..m {
                full[(i, j)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
            }
        }
        jac.states.push(full.slice(ndarray::s![.., ..d]).to_owned());
        jac.actions.push(full.slice(ndarray::s![.., d..]).to_owned());
    }
    Ok(jac)
}

/// Largest singular value of each matrix in `mats`, fully converged.
pub fn operator_norms(mats: &[Matrix]) -> Vec<f64> {
    mats.iter().map(crate::autodiff::spectral_norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Affine;

    impl ActionMap for Affine {
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
            let mut out = states * 2.0;
            for (mut r, a) in out.rows_mut().into_iter().zip(actions.column(0)) {
                r[0] += a;
                r[1] -= 3.0 * a;
            }
            Ok(out)
        }
    }

    #[test]
    fn finite_difference_defaults() {
        let jx = Affine.state_jacobian(&[0.3, -0.1], &[0.5]).unwrap();
        let ja = Affine.action_jacobian(&[0.3, -0.1], &[0.5]).unwrap();
        assert!((jx - array![[2.0, 0.0], [0.0, 2.0]]).iter().all(|v| v.abs() < 1e-8));
        assert!((ja - array![[1.0], [-3.0]]).iter().all(|v| v.abs() < 1e-8));
        let (gx, ga) = Affine.vjp(&[0.0, 0.0], &[0.0], &[1.0, 1.0]).unwrap();
        assert!((gx[0] - 2.0).abs() < 1e-8 && (gx[1] - 2.0).abs() < 1e-8);
        assert!((ga[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn point_shape_errors() {
        assert!(Affine.decode(&[0.0], &[0.0]).is_err());
        assert!(Affine.decode(&[0.0, 0.0], &[0.0, 1.0]).is_err());
        assert!(Affine.vjp(&[0.0, 0.0], &[0.0], &[1.0]).is_err());
    }
}
