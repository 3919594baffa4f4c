use latentmap::maps::{jacobian_at_zero, linearization_gap, ActionMap, Jacobians};
use latentmap::{ActionModel, Architecture, Family, Matrix, Normalization, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(family: Family, strict: bool, seed: u64) -> ActionModel {
    let mut arch = Architecture::new(family, 5, 2).with_width(24);
    arch.strict_odd = strict;
    if family == Family::Scn {
        arch.decoder_hidden = vec![12, 12];
        arch.feature_hidden = vec![16];
        arch.features = 10;
    }
    let norm = Normalization {
        state_mean: vec![0.1, -0.2, 0.0, 0.3, -0.1],
        state_scale: vec![0.8, 1.2, 1.0, 0.5, 2.0],
        velocity_rms: vec![0.02, 0.05, 0.01, 0.03, 0.04],
    };
    ActionModel::new(arch, norm, seed).unwrap()
}

fn probes(rng: &mut ChaCha8Rng, count: usize, d: usize, n: usize, scale: f64) -> (Matrix, Matrix) {
    (
        Array2::from_shape_fn((count, d), |_| rng.random_range(-2.5..2.5)),
        Array2::from_shape_fn((count, n), |_| rng.random_range(-scale..scale)),
    )
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[test]
fn strict_scn_is_odd_with_a_zero_fixed_point() {
    for seed in 0..3 {
        let model = small(Family::Scn, true, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let (xs, acts) = probes(&mut rng, 1000, 5, 2, 1.5);
        let pos = model.decode_batch(&xs, &acts).unwrap();
        let neg = model.decode_batch(&xs, &acts.mapv(|v| -v)).unwrap();
        assert!(max_abs(&(&pos + &neg)) <= 1e-12);
        let zero = model.decode_batch(&xs, &Array2::zeros((1000, 2))).unwrap();
        assert!(max_abs(&zero) <= 1e-12);
        assert!(max_abs(&pos) > 0.0);
    }
}

#[test]
fn untrained_ae_has_an_oddness_counterexample() {
    let model = small(Family::Ae, true, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (xs, acts) = probes(&mut rng, 64, 5, 2, 1.0);
    let pos = model.decode_batch(&xs, &acts).unwrap();
    let neg = model.decode_batch(&xs, &acts.mapv(|v| -v)).unwrap();
    assert!(max_abs(&(&pos + &neg)) > 1e-6);
}

#[test]
fn deployed_hyper_linear_columns_are_orthonormal() {
    let model = small(Family::HyperLinear, true, 2);
    let deployed = model.deployed();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.5..2.5)).collect();
        let q = deployed.decode_at(&x, &Array2::eye(2)).unwrap().reversed_axes();
        let gram = q.t().dot(&q) - Array2::<f64>::eye(2);
        assert!(max_abs(&gram) <= 1e-10, "{gram:?}");
    }
}

fn fd_action_jacobian(model: &ActionModel, x: &[f64]) -> Matrix {
    let h = 1e-6;
    let mut out = Array2::zeros((5, 2));
    for j in 0..2 {
        let mut a = vec![0.0; 2];
        a[j] = h;
        let p = model.decode(x, &a).unwrap();
        a[j] = -h;
        let m = model.decode(x, &a).unwrap();
        for i in 0..5 {
            out[(i, j)] = (p[i] - m[i]) / (2.0 * h);
        }
    }
    out
}

#[test]
fn jacobian_at_zero_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for family in [Family::Ae, Family::Scn, Family::HyperLinear] {
        let model = small(family, true, 6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.5..2.5)).collect();
            let analytic = jacobian_at_zero(&model, &x).unwrap();
            let numeric = fd_action_jacobian(&model, &x);
            let err = latentmap::autodiff::gradcheck::relative_error(&analytic, &numeric);
            assert!(err <= 1e-5, "{family}: {err:e}");
            if family == Family::HyperLinear {
                let h = model.hyper_matrix(&x).unwrap();
                assert!(max_abs(&(&analytic - &h)) <= 1e-15 * max_abs(&h).max(1.0));
            }
        }
    }
}

#[test]
fn zero_weight_scn_has_zero_jacobian() {
    let mut model = small(Family::Scn, true, 0);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model.params.get_mut(id).fill(0.0);
    }
    let j = jacobian_at_zero(&model, &[0.3, 0.1, -0.4, 1.0, 0.0]).unwrap();
    assert_eq!(max_abs(&j), 0.0);
}

fn test_states(seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((24, 5), |_| rng.random_range(-2.0..2.0))
}

#[test]
fn linearization_anchor_and_exact_linearity() {
    let states = test_states(1);
    let mags = [0.0, 0.25, 0.5, 1.0, 2.0];
    for family in [Family::Ae, Family::Scn, Family::HyperLinear] {
        let model = small(family, true, 1);
        let recs = linearization_gap(&model, &states, &mags, 0).unwrap();
        assert_eq!(recs[0].gap, 0.0, "{family}");
        for r in &recs {
            assert!(r.gap >= 0.0 && r.gap.is_finite());
            if family == Family::HyperLinear {
                assert!(r.gap <= 1e-28, "{family} at {}: {}", r.magnitude, r.gap);
            }
        }
    }
}

#[test]
fn nonlinear_gap_has_quartic_scaling() {
    let states = test_states(2);
    let mags: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
    for family in [Family::Ae, Family::Scn] {
        let model = small(family, family == Family::Scn, 3);
        let recs = linearization_gap(&model, &states, &mags, 0).unwrap();
        let ratios: Vec<f64> = recs.iter().map(|r| r.gap / r.magnitude.powi(4)).collect();
        let reference = ratios.iter().copied().fold(0.0, f64::max);
        assert!(reference.is_finite());
        assert!(ratios[0] <= 2.0 * ratios[9] + 1e-3 * reference, "{family}: {ratios:?}");
    }
}

struct QuadraticStub;

impl ActionMap for QuadraticStub {
    fn state_dim(&self) -> usize {
        5
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        let mut out = Array2::zeros((states.nrows(), 5));
        for (b, a) in actions.rows().into_iter().enumerate() {
            let norm = a.dot(&a).sqrt();
            out[(b, 0)] = a[0] * norm;
            out[(b, 1)] = a[1] * norm;
        }
        Ok(out)
    }
    fn jacobians(&self, states: &Matrix, actions: &Matrix) -> Result<Jacobians> {
        let mut acts = Vec::new();
        for a in actions.rows() {
            let norm = a.dot(&a).sqrt();
            let mut j = Array2::zeros((5, 2));
            for r in 0..2 {
                for c in 0..2 {
                    let outer = if norm > 0.0 { a[r] * a[c] / norm } else { 0.0 };
                    j[(r, c)] = outer + if r == c { norm } else { 0.0 };
                }
            }
            acts.push(j);
        }
        Ok(Jacobians {
            states: vec![Array2::zeros((5, 5)); states.nrows()],
            actions: acts,
        })
    }
}

#[test]
fn quadratic_stub_gap_is_fourth_power() {
    let states = test_states(3);
    let mags = [0.0, 0.1, 0.5, 1.0, 2.0];
    let recs = linearization_gap(&QuadraticStub, &states, &mags, 4).unwrap();
    for r in recs {
        let m4 = r.magnitude.powi(4);
        assert!((r.gap - m4).abs() <= 1e-12 * m4.max(1.0), "{r:?}");
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for family in [Family::Ae, Family::Scn, Family::HyperLinear] {
        for strict in [true, false] {
            let model = small(family, strict, 11);
            let path = dir.path().join(format!("{family}-{strict}.json"));
            model.save(&path).unwrap();
            let back = ActionModel::load(&path).unwrap();
            assert_eq!(back.arch, model.arch);
            assert_eq!(back.norm, model.norm);
            for id in model.params.ids() {
                assert_eq!(back.params.get(id), model.params.get(id));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (xs, acts) = probes(&mut rng, 16, 5, 2, 1.0);
            assert_eq!(
                back.decode_batch(&xs, &acts).unwrap(),
                model.decode_batch(&xs, &acts).unwrap()
            );
        }
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = small(Family::Scn, true, 0);
    let mut cp = model.to_checkpoint();
    cp.params[0].data[0] = f64::NAN;
    assert!(ActionModel::from_checkpoint(&cp).is_err());
    let mut cp = model.to_checkpoint();
    cp.params.pop();
    assert!(ActionModel::from_checkpoint(&cp).is_err());
    let text = model.to_checkpoint().to_json().unwrap().replace("latentmap-checkpoint", "other");
    assert!(latentmap::maps::Checkpoint::from_json(&text).is_err());
}
