//! Randomized gradient verification over every layer kind and the training
//! objective.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_gradients, GradientCheck};
use crate::autodiff::{Activation, DenseLayer, Matrix, ParamStore, TensorLayer};
use crate::maps::{ActionModel, Architecture, Family, Normalization};
use crate::training::{record_loss, RegularizerWeights};
use crate::Result;

/// Central-difference step used by the suite.
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    Activation::ALL[rng.random_range(0..Activation::ALL.len())]
}

fn dense_stack(rng: &mut ChaCha8Rng) -> Result<(String, GradientCheck)> {
    let depth = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let batch = rng.random_range(1..=4);
    let bias = rng.random_bool(0.5);
    let act = random_activation(rng);
    let mut params = ParamStore::new();
    let layers: Vec<DenseLayer> = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| DenseLayer::init(&mut params, &format!("dense.{i}"), w[0], w[1], bias, rng))
        .collect();
    let x = random_matrix(rng, batch, sizes[0]);
    let target = random_matrix(rng, batch, sizes[depth]);
    let check = check_gradients(
        &params,
        &[x],
        |tape, v| {
            let mut h = v[0];
            for l in &layers {
                h = l.record(tape, h)?;
                h = tape.activation(h, act);
            }
            tape.sq_dist_mean(h, &target, 0.5)
        },
        GRADIENT_CHECK_STEP,
    )?;
    Ok((format!("dense {sizes:?} {} bias={bias} batch={batch}", act.name()), check))
}

fn tensor_layer(rng: &mut ChaCha8Rng) -> Result<(String, GradientCheck)> {
    let (h, w, n) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=4));
    let batch = rng.random_range(1..=3);
    let bias = rng.random_bool(0.5);
    let act = random_activation(rng);
    let mut params = ParamStore::new();
    let layer = TensorLayer::init(&mut params, "tensor", h, w, n, bias, rng);
    let phi = random_matrix(rng, batch, w);
    let a = random_matrix(rng, batch, n);
    let check = check_gradients(
        &params,
        &[phi, a],
        |tape, v| {
            let z = layer.record(tape, v[0], v[1])?;
            let z = tape.activation(z, act);
            tape.sq_norm_mean(z, 0.5)
        },
        GRADIENT_CHECK_STEP,
    )?;
    Ok((format!("tensor {h}x{w}x{n} {} bias={bias} batch={batch}", act.name()), check))
}

fn elementwise(rng: &mut ChaCha8Rng) -> Result<(String, GradientCheck)> {
    let (batch, d, n) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=3));
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let factor = rng.random_range(-2.0..2.0);
    let params = ParamStore::new();
    let inputs = [
        random_matrix(rng, batch, d * n),
        random_matrix(rng, batch, n),
        random_matrix(rng, batch, d),
        random_matrix(rng, batch, d),
    ];
    let target = random_matrix(rng, batch, 2 * d);
    let check = check_gradients(
        &params,
        &inputs,
        |tape, v| {
            let hv = tape.matvec(v[0], v[1])?;
            let s = tape.affine(v[2], &shift, &scale)?;
            let diff = tape.sub(hv, s)?;
            let neg = tape.neg(v[3]);
            let sum = tape.add(diff, neg)?;
            let scaled = tape.scale(sum, factor);
            let t = tape.activation(v[3], Activation::Sin);
            let joined = tape.concat(scaled, t)?;
            tape.sq_dist_mean(joined, &target, 0.5)
        },
        GRADIENT_CHECK_STEP,
    )?;
    Ok((format!("matvec/affine/concat d={d} n={n} batch={batch}"), check))
}

fn small_model(rng: &mut ChaCha8Rng, family: Family) -> Result<ActionModel> {
    let (d, n) = (rng.random_range(2..=4), rng.random_range(1..=2));
    let mut arch = Architecture::new(family, d, n).with_width(rng.random_range(3..=6));
    arch.encoder_hidden = vec![rng.random_range(3..=6)];
    if family == Family::Scn {
        arch.feature_hidden = vec![rng.random_range(2..=5)];
        arch.features = rng.random_range(2..=4);
    }
    arch.decoder_hidden = vec![rng.random_range(2..=5); rng.random_range(1..=2)];
    arch.strict_odd = rng.random_bool(0.5);
    arch.activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Sin };
    let norm = Normalization {
        state_mean: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        state_scale: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
        velocity_rms: (0..d).map(|_| rng.random_range(0.2..2.0)).collect(),
    };
    ActionModel::new(arch, norm, rng.random())
}

fn model_objective(rng: &mut ChaCha8Rng) -> Result<(String, GradientCheck)> {
    let family = [Family::Ae, Family::HyperLinear, Family::Scn][rng.random_range(0..3)];
    let model = small_model(rng, family)?;
    let d = model.arch.state_dim;
    let batch = rng.random_range(1..=3);
    let states = random_matrix(rng, batch, d);
    let velocities = random_matrix(rng, batch, d);
    let reg = rng.random_bool(0.5);
    let weights = RegularizerWeights {
        inverse: rng.random_range(0.1..2.0),
        zero_action: rng.random_range(0.1..2.0),
        zero_velocity: rng.random_range(0.1..2.0),
    };
    let check = check_gradients(
        &model.params,
        &[],
        |tape, _| {
            Ok(record_loss(&model, tape, &states, &velocities, reg.then_some(&weights))?.total)
        },
        GRADIENT_CHECK_STEP,
    )?;
    Ok((format!("{family} objective d={d} regularizer={reg} batch={batch}"), check))
}

fn model_inputs(rng: &mut ChaCha8Rng) -> Result<(String, GradientCheck)> {
    let family = [Family::Ae, Family::HyperLinear, Family::Scn][rng.random_range(0..3)];
    let model = small_model(rng, family)?;
    let (d, n) = (model.arch.state_dim, model.arch.action_dim);
    let batch = rng.random_range(1..=3);
    let inputs = [random_matrix(rng, batch, d), random_matrix(rng, batch, n)];
    let check = check_gradients(
        &model.params,
        &inputs,
        |tape, v| {
            let out = model.record_decoder(tape, v[0], v[1])?;
            tape.sq_norm_mean(out, 0.5)
        },
        GRADIENT_CHECK_STEP,
    )?;
    Ok((format!("{family} decoder inputs d={d} n={n} batch={batch}"), check))
}

/// Runs `configs` randomized gradient checks, cycling through dense stacks,
/// tensor layers, the elementwise and matrix ops, model objectives and
/// decoder input gradients.
pub fn gradient_suite(configs: usize, seed: u64) -> Result<Vec<(String, GradientCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..configs)
        .map(|i| match i % 5 {
            0 => dense_stack(&mut rng),
            1 => tensor_layer(&mut rng),
            2 => elementwise(&mut rng),
            3 => model_objective(&mut rng),
            _ => model_inputs(&mut rng),
        })
        .collect()
}
