use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lipschitz::{LayerProjection, LipschitzConfig, Projector};
use super::loss::{record_loss, reconstruction_mse, RegularizerWeights};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Matrix, Tape};
use crate::data::{Dataset, Split};
use crate::maps::ActionModel;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub regularizer: bool,
    pub weights: RegularizerWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            regularizer: false,
            weights: RegularizerWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    /// Mean `½‖ẋ − f‖²` on the validation split, if any.
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub family: String,
    pub seed: u64,
    pub steps: u64,
    pub projection: bool,
    pub epochs: Vec<EpochStats>,
    /// Per-entry mean squared reconstruction error on the test split.
    pub test_mse: Option<f64>,
    pub log10_test_mse: Option<f64>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:?}"));
        let mut out = String::new();
        let _ = writeln!(out, "family={}", self.family);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "steps={}", self.steps);
        let _ = writeln!(out, "projection={}", self.projection);
        let _ = writeln!(out, "epochs={}", self.epochs.len());
        let _ = writeln!(out, "test_mse={}", opt(self.test_mse));
        let _ = writeln!(out, "log10_test_mse={}", opt(self.log10_test_mse));
        let _ = writeln!(out, "wall_clock_s={:.3}", self.wall_clock_s);
        for e in &self.epochs {
            let _ = writeln!(out, "epoch.{}.train_loss={:?}", e.epoch, e.train_loss);
            let _ = writeln!(out, "epoch.{}.validation_loss={}", e.epoch, opt(e.validation_loss));
        }
        out
    }

    /// The report with timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Passed to the observer after every optimizer step.
#[derive(Clone, Debug)]
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub projection: Option<&'a [LayerProjection]>,
}

/// Mini-batch Adam on the reconstruction (plus optional regularizer)
/// objective. With `lip`, the decoder is projected after every update.
pub fn train(
    model: &mut ActionModel,
    split: &Split,
    cfg: &TrainConfig,
    lip: Option<&LipschitzConfig>,
) -> Result<TrainReport> {
    train_observed(model, split, cfg, lip, |_, _| {})
}

/// [`train`] with a callback after each step.
pub fn train_observed<F>(
    model: &mut ActionModel,
    split: &Split,
    cfg: &TrainConfig,
    lip: Option<&LipschitzConfig>,
    mut observer: F,
) -> Result<TrainReport>
where
    F: FnMut(&StepInfo<'_>, &ActionModel),
{
    cfg.validate()?;
    let train = &split.train;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if train.state_dim() != model.arch.state_dim {
        return Err(Error::Shape(format!(
            "dataset has {}-dim states, model expects {}",
            train.state_dim(),
            model.arch.state_dim
        )));
    }
    let started = Instant::now();
    let mut projector = lip.map(|l| Projector::new(model, *l)).transpose()?;
    if let Some(p) = projector.as_mut() {
        p.project(model);
    }
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let weights = cfg.regularizer.then_some(&cfg.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs = train.states.select(ndarray::Axis(0), chunk);
            let vs = train.velocities.select(ndarray::Axis(0), chunk);
            let (loss, grads) = {
                let mut tape = Tape::new(&model.params);
                let vars = record_loss(model, &mut tape, &xs, &vs, weights)?;
                let loss = tape.value(vars.total)[(0, 0)];
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                (loss, tape.backward(vars.total, &Matrix::from_elem((1, 1), 1.0))?)
            };
            adam_step(&mut model.params, &grads, &mut adam)?;
            let proj = projector.as_mut().map(|p| p.project(model));
            observer(
                &StepInfo {
                    epoch,
                    batch,
                    loss,
                    projection: proj.as_deref(),
                },
                model,
            );
            total += loss;
            batches += 1;
        }
        let validation_loss = validation(model, &split.validation)?;
        epochs.push(EpochStats {
            epoch,
            train_loss: total / batches as f64,
            validation_loss,
        });
        log::debug!(
            "epoch {epoch}: train {:.6e}, validation {:?}",
            total / batches as f64,
            validation_loss
        );
    }

    let test_mse = if split.test.is_empty() {
        None
    } else {
        Some(reconstruction_mse(model, &split.test.states, &split.test.velocities)?)
    };
    Ok(TrainReport {
        family: model.family().to_string(),
        seed: cfg.seed,
        steps: adam.step,
        projection: projector.is_some(),
        epochs,
        test_mse,
        log10_test_mse: test_mse.map(f64::log10),
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

fn validation(model: &ActionModel, data: &Dataset) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mse = reconstruction_mse(model, &data.states, &data.velocities)?;
    Ok(Some(0.5 * mse * data.state_dim() as f64))
}
