use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{spectral_norm, Matrix};
use crate::maps::{clamp_action, ActionMap, ActionSpace};
use crate::{Error, Result};

/// Axis-aligned state box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Input("region bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Input("region bounds must be finite with lower ≤ upper".into()));
        }
        Ok(Region { lower, upper })
    }

    pub fn from_limits(limits: &[(f64, f64)]) -> Result<Self> {
        Region::new(limits.iter().map(|l| l.0).collect(), limits.iter().map(|l| l.1).collect())
    }

    /// Bounding box of the rows of `states`, widened by `margin` times its
    /// extent on each side.
    pub fn from_states(states: &Matrix, margin: f64) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::Input("cannot take the bounding box of no states".into()));
        }
        let lo = states.fold_axis(Axis(0), f64::INFINITY, |a, b| a.min(*b));
        let hi = states.fold_axis(Axis(0), f64::NEG_INFINITY, |a, b| a.max(*b));
        let pad = (&hi - &lo) * margin;
        Region::new((&lo - &pad).to_vec(), (&hi + &pad).to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l < u { rng.random_range(*l..*u) } else { *l })
            .collect()
    }
}

/// Search effort of [`estimate_bounds`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationBudget {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Random probes screened to pick the restart points.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for EstimationBudget {
    fn default() -> Self {
        EstimationBudget {
            restarts: 32,
            steps: 200,
            step_size: 0.01,
            candidates: 1024,
            seed: 0,
        }
    }
}

/// A maximized quantity and where it was found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub value: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
}

/// Estimated `M`, `L`, `E` (lower bounds of the true suprema) with their
/// witnesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub m: Witness,
    pub l: Witness,
    pub e: Witness,
    pub evaluations: usize,
}

impl BoundEstimates {
    pub fn values(&self) -> (f64, f64, f64) {
        (self.m.value, self.l.value, self.e.value)
    }
}

const FD_H: f64 = 1e-5;

#[derive(Clone, Copy, PartialEq)]
enum Target {
    Velocity,
    Lipschitz,
    Residual,
}

struct Search<'a, M: ?Sized> {
    map: &'a M,
    region: &'a Region,
    space: &'a ActionSpace,
    evaluations: usize,
}

fn norm(v: ndarray::ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

impl<M: ActionMap + ?Sized> Search<'_, M> {
    fn objective(&mut self, target: Target, xs: &Matrix, acts: &Matrix) -> Result<Vec<f64>> {
        self.evaluations += xs.nrows();
        Ok(match target {
            Target::Velocity => {
                let f = self.map.decode_batch(xs, acts)?;
                f.rows().into_iter().map(norm).collect()
            }
            Target::Residual => {
                let f = self.map.decode_batch(xs, acts)?;
                let g = self.map.decode_batch(xs, &acts.mapv(|v| -v))?;
                (&f + &g).rows().into_iter().map(norm).collect()
            }
            Target::Lipschitz => self
                .map
                .jacobians(xs, acts)?
                .states
                .iter()
                .map(spectral_norm)
                .collect(),
        })
    }

    /// Ascent direction for every row: analytic for `M` and `E`, central
    /// differences of `σ_max(J_x)` for `L`.
    fn gradient(&mut self, target: Target, xs: &Matrix, acts: &Matrix) -> Result<(Matrix, Matrix)> {
        let (b, d) = xs.dim();
        let n = acts.ncols();
        match target {
            Target::Velocity => {
                let f = self.map.decode_batch(xs, acts)?;
                let c = unit_rows(&f);
                self.evaluations += b;
                self.map.vjp_batch(xs, acts, &c)
            }
            Target::Residual => {
                let neg = acts.mapv(|v| -v);
                let f = self.map.decode_batch(xs, acts)?;
                let g = self.map.decode_batch(xs, &neg)?;
                let c = unit_rows(&(&f + &g));
                let (gx1, ga1) = self.map.vjp_batch(xs, acts, &c)?;
                let (gx2, ga2) = self.map.vjp_batch(xs, &neg, &c)?;
                self.evaluations += 2 * b;
                Ok((gx1 + gx2, ga1 - ga2))
            }
            Target::Lipschitz => {
                let k = d + n;
                let rows = b * 2 * k;
                let mut px = Array2::zeros((rows, d));
                let mut pa = Array2::zeros((rows, n));
                for r in 0..b {
                    for p in 0..2 * k {
                        let i = r * 2 * k + p;
                        px.row_mut(i).assign(&xs.row(r));
                        pa.row_mut(i).assign(&acts.row(r));
                        let h = if p % 2 == 0 { FD_H } else { -FD_H };
                        let j = p / 2;
                        if j < d {
                            px[(i, j)] += h;
                        } else {
                            pa[(i, j - d)] += h;
                        }
                    }
                }
                let vals = self.objective(Target::Lipschitz, &px, &pa)?;
                let mut gx = Array2::zeros((b, d));
                let mut ga = Array2::zeros((b, n));
                for r in 0..b {
                    for j in 0..k {
                        let g = (vals[r * 2 * k + 2 * j] - vals[r * 2 * k + 2 * j + 1]) / (2.0 * FD_H);
                        if j < d {
                            gx[(r, j)] = g;
                        } else {
                            ga[(r, j - d)] = g;
                        }
                    }
                }
                Ok((gx, ga))
            }
        }
    }

    fn project(&self, xs: &mut Matrix, acts: &mut Matrix) {
        for mut r in xs.rows_mut() {
            let mut v = r.to_vec();
            self.region.project(&mut v);
            r.assign(&ndarray::ArrayView1::from(&v));
        }
        for mut r in acts.rows_mut() {
            let v = clamp_action(self.space, &r.to_vec());
            r.assign(&ndarray::ArrayView1::from(&v));
        }
    }

    fn maximize(&mut self, target: Target, budget: &EstimationBudget, rng: &mut ChaCha8Rng) -> Result<Witness> {
        let (d, n) = (self.region.dim(), self.space.dim);
        let probes = budget.candidates.max(budget.restarts).max(1);
        let mut xs = Array2::zeros((probes, d));
        let mut acts = Array2::zeros((probes, n));
        for i in 0..probes {
            xs.row_mut(i).assign(&ndarray::Array1::from(self.region.sample(rng)));
            let a: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-self.space.bound..=self.space.bound))
                .collect();
            acts.row_mut(i).assign(&ndarray::Array1::from(clamp_action(self.space, &a)));
        }
        let vals = self.objective(target, &xs, &acts)?;
        let mut best: Option<Witness> = None;
        let mut consider = |v: f64, x: ndarray::ArrayView1<'_, f64>, a: ndarray::ArrayView1<'_, f64>| {
            if v.is_finite() && best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(Witness { value: v, x: x.to_vec(), a: a.to_vec() });
            }
        };
        for (i, v) in vals.iter().enumerate() {
            consider(*v, xs.row(i), acts.row(i));
        }
        let mut order: Vec<usize> = (0..probes).filter(|i| vals[*i].is_finite()).collect();
        order.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]).then(a.cmp(b)));
        order.truncate(budget.restarts);
        if order.is_empty() {
            return Err(Error::Estimation("no finite evaluation in the screening probes".into()));
        }
        let mut cx = xs.select(Axis(0), &order);
        let mut ca = acts.select(Axis(0), &order);
        let mut cur: Vec<f64> = order.iter().map(|i| vals[*i]).collect();
        let mut eta = vec![budget.step_size; order.len()];
        for _ in 0..budget.steps {
            let (gx, ga) = self.gradient(target, &cx, &ca)?;
            let mut nx = cx.clone();
            let mut na = ca.clone();
            for r in 0..cx.nrows() {
                let gn = (gx.row(r).dot(&gx.row(r)) + ga.row(r).dot(&ga.row(r))).sqrt();
                if gn > 0.0 && gn.is_finite() {
                    let s = eta[r] / gn;
                    nx.row_mut(r).scaled_add(s, &gx.row(r));
                    na.row_mut(r).scaled_add(s, &ga.row(r));
                }
            }
            self.project(&mut nx, &mut na);
            let nv = self.objective(target, &nx, &na)?;
            for r in 0..cx.nrows() {
                if nv[r].is_finite() && nv[r] > cur[r] {
                    cx.row_mut(r).assign(&nx.row(r));
                    ca.row_mut(r).assign(&na.row(r));
                    cur[r] = nv[r];
                    eta[r] = (eta[r] * 1.5).min(budget.step_size * 10.0);
                    consider(nv[r], cx.row(r), ca.row(r));
                } else {
                    eta[r] *= 0.5;
                }
            }
        }
        best.ok_or_else(|| Error::Estimation("no finite evaluation".into()))
    }
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut r in out.rows_mut() {
        let n = norm(r.view());
        if n > 0.0 {
            r.mapv_inplace(|v| v / n);
        }
    }
    out
}

/// Projected gradient ascent (with screened restarts and backtracking) for
/// `M = max ‖f‖`, `L = max σ_max(∂f/∂x)` and `E = max ‖f(x, a) + f(x, −a)‖`
/// over `region × space`.
pub fn estimate_bounds<M: ActionMap + ?Sized>(
    map: &M,
    region: &Region,
    space: &ActionSpace,
    budget: &EstimationBudget,
) -> Result<BoundEstimates> {
    if region.dim() != map.state_dim() || space.dim != map.action_dim() {
        return Err(Error::Shape(format!(
            "region of dimension {} / actions of dimension {} for a map over {} / {}",
            region.dim(),
            space.dim,
            map.state_dim(),
            map.action_dim()
        )));
    }
    space.validate()?;
    let mut search = Search {
        map,
        region,
        space,
        evaluations: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let m = search.maximize(Target::Velocity, budget, &mut rng)?;
    let l = search.maximize(Target::Lipschitz, budget, &mut rng)?;
    let e = search.maximize(Target::Residual, budget, &mut rng)?;
    Ok(BoundEstimates {
        m,
        l,
        e,
        evaluations: search.evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear;

    impl ActionMap for Linear {
        fn state_dim(&self) -> usize {
            2
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn decode_batch(&self, x: &Matrix, a: &Matrix) -> Result<Matrix> {
            Ok(x * 2.0 + a)
        }
    }

    #[test]
    fn linear_toy() {
        let region = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let space = ActionSpace::unit_box(2);
        let budget = EstimationBudget { restarts: 4, steps: 20, candidates: 64, ..Default::default() };
        let est = estimate_bounds(&Linear, &region, &space, &budget).unwrap();
        assert!((est.l.value - 2.0).abs() < 1e-8, "{}", est.l.value);
        assert!(est.m.value <= 3.0 * 2f64.sqrt() + 1e-9);
        assert!(est.m.value > 3.0 * 2f64.sqrt() - 1e-2, "{}", est.m.value);
        assert!((est.e.value - 4.0 * 2f64.sqrt()).abs() < 1e-2, "{}", est.e.value);
    }

    #[test]
    fn region_helpers() {
        let r = Region::from_states(&ndarray::array![[0.0, 1.0], [2.0, 1.0]], 0.5).unwrap();
        assert_eq!(r.lower, vec![-1.0, 1.0]);
        assert_eq!(r.upper, vec![3.0, 1.0]);
        assert!(Region::new(vec![1.0], vec![0.0]).is_err());
        let mut x = vec![5.0, 0.0];
        r.project(&mut x);
        assert_eq!(x, vec![3.0, 1.0]);
    }
}
