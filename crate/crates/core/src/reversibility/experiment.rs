use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bounds::{bound_corollary, reversal_bounds};
use super::estimate::BoundEstimates;
use super::euler::{reversal_error, EulerConfig};
use crate::autodiff::Matrix;
use crate::maps::ActionMap;
use crate::{Error, Result};

/// Observed reversal errors for one duration against the bounds evaluated
/// at the estimated `(M, L, E)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub steps: usize,
    pub nu: f64,
    pub errors: Vec<f64>,
    pub observed_mean: f64,
    pub observed_stderr: f64,
    pub tight: f64,
    pub exponential: f64,
    /// `None` when `L = 0`.
    pub corollary: Option<f64>,
    pub m: f64,
    pub l: f64,
    pub e: f64,
    pub within_tight: bool,
    pub within_exponential: bool,
    /// Within the corollary bound (equal to the exponential bound at `E = 0`).
    pub satisfied: bool,
}

pub const BOUND_CSV_HEADER: &str =
    "T,nu,observed_mean,observed_stderr,tight,exponential,corollary,M,L,E,satisfied";

impl BoundReport {
    pub fn from_errors(errors: Vec<f64>, steps: usize, nu: f64, est: &BoundEstimates) -> Result<Self> {
        let (m, l, e) = est.values();
        let th = reversal_bounds(nu, m, l, steps)?;
        let corollary = if l > 0.0 {
            Some(bound_corollary(nu, m, l, e, steps)?)
        } else {
            None
        };
        let (mean, stderr) = mean_stderr(&errors);
        let max = errors.iter().copied().fold(0.0, f64::max);
        let reference = corollary.unwrap_or(th.exponential);
        Ok(BoundReport {
            steps,
            nu,
            observed_mean: mean,
            observed_stderr: stderr,
            tight: th.tight,
            exponential: th.exponential,
            corollary,
            m,
            l,
            e,
            within_tight: max <= th.tight,
            within_exponential: max <= th.exponential,
            satisfied: max <= reference,
            errors,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{}",
            self.steps,
            self.nu,
            self.observed_mean,
            self.observed_stderr,
            self.tight,
            self.exponential,
            self.corollary.map_or_else(|| "nan".into(), |c| format!("{c:?}")),
            self.m,
            self.l,
            self.e,
            self.satisfied
        )
    }
}

pub fn reports_to_csv(reports: &[BoundReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{BOUND_CSV_HEADER}");
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn unit_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Settings of the duration sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub durations: Vec<usize>,
    pub trials: usize,
    pub nu: f64,
    /// Draw a fresh unit action every forward step instead of holding one.
    pub resample: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            durations: vec![10, 100, 1000],
            trials: 20,
            nu: 0.001,
            resample: false,
            seed: 0,
        }
    }
}

/// Per duration: `trials` reversal runs from seeded start rows of `starts`
/// with unit-norm actions, summarized against the bounds.
pub fn reversibility_experiment<M: ActionMap + ?Sized>(
    map: &M,
    starts: &Matrix,
    est: &BoundEstimates,
    cfg: &ExperimentConfig,
) -> Result<Vec<BoundReport>> {
    if starts.nrows() == 0 {
        return Err(Error::Input("no start states for the reversibility experiment".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::Input("at least one trial is needed".into()));
    }
    let n = map.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cfg.durations
        .iter()
        .map(|&steps| {
            let euler = EulerConfig::new(cfg.nu, steps)?;
            let mut errors = Vec::with_capacity(cfg.trials);
            for _ in 0..cfg.trials {
                let x0 = starts.row(rng.random_range(0..starts.nrows())).to_vec();
                let actions: Vec<Vec<f64>> = if cfg.resample {
                    (0..steps).map(|_| unit_direction(&mut rng, n)).collect()
                } else {
                    vec![unit_direction(&mut rng, n); steps]
                };
                errors.push(reversal_error(map, &x0, &actions, &euler)?.0);
            }
            BoundReport::from_errors(errors, steps, cfg.nu, est)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nu: f64,
    pub steps: usize,
    pub mean_error: f64,
}

/// Steps of size `nu` covering `span`, if that count is integral.
pub fn integral_steps(span: f64, nu: f64) -> Result<usize> {
    if !(nu > 0.0) || !(span >= 0.0) {
        return Err(Error::Input(format!("invalid span {span} or step {nu}")));
    }
    let k = (span / nu).round();
    if (k * nu - span).abs() > 1e-9 * span.max(nu) {
        return Err(Error::Input(format!("{span} is not an integral multiple of ν = {nu}")));
    }
    Ok(k as usize)
}

/// Mean reversal error at a fixed physical horizon for each step size.
/// Actions are unit vectors held constant over `segments` equal pieces of the
/// horizon, identical across step sizes for a given trial.
pub fn convergence_study<M: ActionMap + ?Sized>(
    map: &M,
    x0: &[f64],
    horizon: f64,
    segments: usize,
    nus: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if segments == 0 || trials == 0 {
        return Err(Error::Input("segments and trials must be at least 1".into()));
    }
    let n = map.action_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<Vec<Vec<f64>>> = (0..trials)
        .map(|_| (0..segments).map(|_| unit_direction(&mut rng, n)).collect())
        .collect();
    nus.iter()
        .map(|&nu| {
            let steps = integral_steps(horizon, nu)?;
            let per = integral_steps(horizon / segments as f64, nu)?;
            let euler = EulerConfig::new(nu, steps)?;
            let mut total = 0.0;
            for plan in &plans {
                let actions: Vec<Vec<f64>> = (0..steps).map(|k| plan[(k / per).min(segments - 1)].clone()).collect();
                total += reversal_error(map, x0, &actions, &euler)?.0;
            }
            Ok(ConvergenceRow {
                nu,
                steps,
                mean_error: total / trials as f64,
            })
        })
        .collect()
}

/// Least-squares slope of `log(error)` against `log(ν)`.
pub fn empirical_order(rows: &[ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_error > 0.0)
        .map(|r| (r.nu.ln(), r.mean_error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_step_counts() {
        assert_eq!(integral_steps(1.0, 0.001).unwrap(), 1000);
        assert_eq!(integral_steps(0.3, 0.1).unwrap(), 3);
        assert!(matches!(integral_steps(1.0, 0.3), Err(Error::Input(_))));
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[2.0; 5]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn order_of_linear_errors() {
        let rows: Vec<ConvergenceRow> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&nu| ConvergenceRow { nu, steps: 0, mean_error: 3.0 * nu })
            .collect();
        assert!((empirical_order(&rows).unwrap() - 1.0).abs() < 1e-12);
    }
}
