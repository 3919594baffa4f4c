use latentmap::data::{split_dataset, Dataset, Split};
use latentmap::sim::{generate_dataset, ArmModel, DemoConfig, PreprocessConfig};
use latentmap::training::{
    layer_bounds, lipschitz_project, mean_regularizer, recon_loss, train, train_observed,
    LipschitzConfig, TrainConfig,
};
use latentmap::{Activation, ActionMap, ActionModel, Architecture, Family, Normalization};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planar_split(trajectories: usize, steps: usize) -> Split {
    let cfg = DemoConfig { steps, ..DemoConfig::default() };
    let data = generate_dataset(&ArmModel::planar5(), trajectories, &cfg, &PreprocessConfig::default(), 3).unwrap();
    split_dataset(&data, (0.8, 0.1, 0.1), 0).unwrap()
}

fn model_for(split: &Split, family: Family, width: usize, seed: u64) -> ActionModel {
    let mut arch = Architecture::new(family, 5, 2).with_width(width);
    if family == Family::Scn {
        arch.decoder_hidden = vec![width / 2; 2];
        arch.feature_hidden = vec![width];
        arch.features = width / 2;
    }
    let norm = Normalization::fit(&split.train.states, &split.train.velocities);
    ActionModel::new(arch, norm, seed).unwrap()
}

fn linear_synthetic() -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 4000;
    let b = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
    let xs = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
    let a = Array2::from_shape_fn((n, 2), |_| rng.random_range(-0.5..0.5));
    let data = Dataset::new(xs, a.dot(&b.t())).unwrap();
    split_dataset(&data, (0.9, 0.05, 0.05), 0).unwrap()
}

#[test]
fn realizable_linear_task_is_learned_monotonically() {
    let split = linear_synthetic();
    let mut arch = Architecture::new(Family::HyperLinear, 5, 2).with_width(32);
    arch.activation = Activation::Identity;
    let norm = Normalization::fit(&split.train.states, &split.train.velocities);
    let mut model = ActionModel::new(arch, norm, 0).unwrap();
    let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
    let report = train(&mut model, &split, &cfg, None).unwrap();
    let mse = report.test_mse.unwrap();
    assert!(mse <= 1e-8, "test MSE {mse:e}");
    assert_eq!(report.log10_test_mse.unwrap(), mse.log10());
    for w in report.epochs.windows(2) {
        assert!(
            w[1].train_loss <= w[0].train_loss + 1e-6,
            "loss rose at epoch {}: {} -> {}",
            w[1].epoch,
            w[0].train_loss,
            w[1].train_loss
        );
    }
}

#[test]
fn training_is_bit_reproducible() {
    let split = planar_split(2, 240);
    let cfg = TrainConfig { epochs: 5, batch_size: 32, regularizer: true, seed: 7, ..TrainConfig::default() };
    let run = || {
        let mut model = model_for(&split, Family::Scn, 16, 1);
        let report = train(&mut model, &split, &cfg, Some(&LipschitzConfig::new(0.125))).unwrap();
        (model.to_checkpoint().to_json().unwrap(), report.without_timing())
    };
    assert_eq!(run(), run());
}

fn assert_projected(model: &ActionModel, lip: &LipschitzConfig) {
    for (i, p) in layer_bounds(model, lip).unwrap().iter().enumerate() {
        assert!(p.slack() <= 1e-9, "layer {i}: A·‖H‖ = {} > λ = {}", p.input_bound * p.norm_after, p.lambda);
    }
}

#[test]
fn projection_bounds_every_layer_and_is_idempotent() {
    let split = planar_split(2, 240);
    for (family, global) in [(Family::Scn, 0.125), (Family::Scn, 0.0156), (Family::Ae, 0.5)] {
        for seed in 0..3 {
            let mut model = model_for(&split, family, 24, seed);
            let lip = LipschitzConfig::new(global);
            lipschitz_project(&mut model, &lip).unwrap();
            assert_projected(&model, &lip);
            let once = model.params.clone();
            lipschitz_project(&mut model, &lip).unwrap();
            for id in once.ids() {
                let diff = (once.get(id) - model.params.get(id)).mapv(f64::abs);
                assert!(diff.iter().all(|d| *d <= 1e-12), "{family} {}", once.name(id));
            }
        }
    }
}

#[test]
fn projection_holds_after_every_training_step() {
    let split = planar_split(2, 240);
    let lip = LipschitzConfig::new(0.125);
    let mut model = model_for(&split, Family::Scn, 16, 2);
    let cfg = TrainConfig { epochs: 3, batch_size: 32, ..TrainConfig::default() };
    let mut steps = 0;
    train_observed(&mut model, &split, &cfg, Some(&lip), |info, m| {
        assert!(info.projection.is_some());
        assert_projected(m, &lip);
        steps += 1;
    })
    .unwrap();
    assert!(steps > 10);
}

#[test]
fn hyper_linear_projection_needs_opting_in() {
    let split = planar_split(2, 240);
    let mut model = model_for(&split, Family::HyperLinear, 16, 0);
    assert!(lipschitz_project(&mut model, &LipschitzConfig::new(1.0)).is_err());
    let lip = LipschitzConfig { include_hyperlinear: true, ..LipschitzConfig::new(1.0) };
    lipschitz_project(&mut model, &lip).unwrap();
    assert_projected(&model, &lip);
}

#[test]
fn regularized_training_shrinks_decoder_terms() {
    let split = planar_split(3, 300);
    let mut model = model_for(&split, Family::Ae, 32, 5);
    let val = &split.validation;
    let before = mean_regularizer(&model, &val.states, &val.velocities).unwrap();
    let cfg = TrainConfig { epochs: 40, batch_size: 32, regularizer: true, seed: 1, ..TrainConfig::default() };
    train(&mut model, &split, &cfg, None).unwrap();
    let after = mean_regularizer(&model, &val.states, &val.velocities).unwrap();
    assert!(after.inverse < before.inverse, "{before:?} -> {after:?}");
    assert!(after.zero_action < before.zero_action, "{before:?} -> {after:?}");
}

#[test]
fn scn_decoder_terms_vanish_by_construction() {
    let split = planar_split(2, 240);
    let model = model_for(&split, Family::Scn, 16, 3);
    let a = model.encode_batch(&split.test.states, &split.test.velocities).unwrap();
    let fwd = model.decode_batch(&split.test.states, &a).unwrap();
    let back = model.decode_batch(&split.test.states, &a.mapv(|v| -v)).unwrap();
    let rest = model.decode_batch(&split.test.states, &Array2::zeros(a.dim())).unwrap();
    let odd: f64 = (&fwd + &back).iter().map(|v| v * v).sum();
    let zero: f64 = rest.iter().map(|v| v * v).sum();
    assert!(odd <= 1e-20 && zero <= 1e-20, "{odd:e} {zero:e}");
}

proptest! {
    #[test]
    fn recon_loss_is_half_squared_distance(
        v in proptest::collection::vec(-10.0f64..10.0, 1..8),
        k in 0.1f64..4.0,
    ) {
        prop_assert_eq!(recon_loss(&v, &v).unwrap(), 0.0);
        let pred: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
        let far: Vec<f64> = v.iter().map(|x| x + 0.5 * k).collect();
        let base = recon_loss(&v, &pred).unwrap();
        let scaled = recon_loss(&v, &far).unwrap();
        prop_assert!((base - 0.125 * v.len() as f64).abs() <= 1e-12);
        prop_assert!((scaled - k * k * base).abs() <= 1e-9 * scaled.max(1.0));
    }
}
