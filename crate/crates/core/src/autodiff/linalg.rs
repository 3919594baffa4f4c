//! Spectral norms by power iteration and modified Gram-Schmidt.

use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::Matrix;
use crate::{Error, Result};

/// Relative residual tolerance used when a full-precision norm is requested.
pub const FULL_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 20_000;

/// Power iteration on the smaller Gram matrix, optionally warm-started from
/// the vector left behind by the previous call.
#[derive(Clone, Debug, Default)]
pub struct PowerIteration {
    vector: Option<Array1<f64>>,
}

impl PowerIteration {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest singular value of `m`.
    ///
    /// Runs at least `min_iters` steps and stops once the eigen-residual
    /// `‖Gv − λv‖` of the Gram matrix drops below `tol · λ`, or after
    /// `max_iters` steps.
    pub fn estimate(
        &mut self,
        m: ArrayView2<'_, f64>,
        min_iters: usize,
        max_iters: usize,
        tol: f64,
    ) -> f64 {
        let (rows, cols) = m.dim();
        if rows == 0 || cols == 0 || m.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        // Iterate on the side with the smaller Gram matrix.
        let transpose = rows < cols;
        let dim = if transpose { rows } else { cols };
        let apply = |v: &Array1<f64>| -> Array1<f64> {
            if transpose {
                m.dot(&m.t().dot(v))
            } else {
                m.t().dot(&m.dot(v))
            }
        };

        let mut v = match self.vector.take() {
            Some(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => v,
            _ => start_vector(dim, 0),
        };
        normalize(&mut v);

        let mut restarts = 0;
        let mut iter = 0;
        loop {
            let w = apply(&v);
            let lambda = v.dot(&w);
            let w_norm = w.dot(&w).sqrt();
            if w_norm == 0.0 {
                // Start vector fell in the null space; try another.
                restarts += 1;
                if restarts > 8 {
                    self.vector = None;
                    return 0.0;
                }
                v = start_vector(dim, restarts);
                normalize(&mut v);
                continue;
            }
            let residual = (&w - &(&v * lambda)).mapv(|x| x * x).sum().sqrt();
            iter += 1;
            let converged = iter >= min_iters && residual <= tol * lambda.abs();
            v = w / w_norm;
            if converged || iter >= max_iters {
                break;
            }
        }
        let sigma = if transpose {
            m.t().dot(&v).mapv(|x| x * x).sum().sqrt()
        } else {
            m.dot(&v).mapv(|x| x * x).sum().sqrt()
        };
        self.vector = Some(v);
        sigma
    }

    /// Full-precision estimate (warm-started if possible).
    pub fn converge(&mut self, m: ArrayView2<'_, f64>) -> f64 {
        self.estimate(m, 1, MAX_ITERATIONS, FULL_TOLERANCE)
    }

    pub fn reset(&mut self) {
        self.vector = None;
    }
}

fn start_vector(dim: usize, salt: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_u64 ^ salt);
    Array1::from_shape_fn(dim, |_| rng.random_range(0.5..1.5))
}

fn normalize(v: &mut Array1<f64>) {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        *v /= n;
    }
}

/// Largest singular value (operator 2-norm), converged to [`FULL_TOLERANCE`].
/// A zero matrix has norm 0.
pub fn spectral_norm(m: &Matrix) -> f64 {
    PowerIteration::new().converge(m.view())
}

/// Orthonormalizes the columns of `m` in order `0..n` by modified
/// Gram-Schmidt. A column whose residual norm falls below `tol` is reported
/// as degenerate.
pub fn gram_schmidt(m: &Matrix, tol: f64) -> Result<Matrix> {
    let mut q = m.clone();
    let cols = q.ncols();
    for j in 0..cols {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &qi);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if !(norm >= tol) {
            return Err(Error::Degenerate(format!(
                "column {j} is (nearly) dependent on earlier columns: residual norm {norm:e}"
            )));
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(q)
}
