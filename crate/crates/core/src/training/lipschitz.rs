use serde::{Deserialize, Serialize};

use crate::autodiff::linalg::FULL_TOLERANCE;
use crate::autodiff::{Matrix, ParamStore, PowerIteration};
use crate::maps::{ActionModel, Family, ProjectedLayer};
use crate::{Error, Result};

/// Minimum warm-started power iterations per projection call.
pub const PROJECTION_MIN_ITERATIONS: usize = 5;
const PROJECTION_MAX_ITERATIONS: usize = 20_000;

/// Target bounds for the layer-wise projection. Only `p = 2` is supported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    /// Global bound `Λ`.
    pub global: f64,
    /// Per-layer bound `λ`; defaults to `Λ^(1/depth)`.
    pub layer: Option<f64>,
    /// Assumed bound on the input action norm (initial `A`).
    pub action_norm: f64,
    /// Whether hyper-linear decoders may be projected.
    pub include_hyperlinear: bool,
}

impl LipschitzConfig {
    pub fn new(global: f64) -> Self {
        LipschitzConfig {
            global,
            layer: None,
            action_norm: std::f64::consts::SQRT_2,
            include_hyperlinear: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.global) || !self.layer.is_none_or(ok) || !ok(self.action_norm) {
            return Err(Error::Config(format!(
                "Lipschitz bounds must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_bound(&self, depth: usize) -> f64 {
        self.layer
            .unwrap_or_else(|| self.global.powf(1.0 / depth.max(1) as f64))
    }
}

/// What the projection did to one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProjection {
    /// Running input-norm bound `A` entering the layer.
    pub input_bound: f64,
    pub norm_before: f64,
    pub scale: f64,
    pub norm_after: f64,
    pub lambda: f64,
}

impl LayerProjection {
    /// `A · ‖H̄‖₂ − λ` after projection; non-positive when satisfied.
    pub fn slack(&self) -> f64 {
        self.input_bound * self.norm_after - self.lambda
    }
}

/// `‖σ(row-wise absolute sums)‖₂`.
fn next_input_bound(params: &ParamStore, layer: &ProjectedLayer) -> f64 {
    let w = params.get(layer.weight);
    w.rows()
        .into_iter()
        .map(|r| {
            let s = layer.activation.apply(r.iter().map(|v| v.abs()).sum());
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

fn row_scaled(w: &Matrix, scale: &[f64]) -> Matrix {
    let mut out = w.clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(scale) {
        row.mapv_inplace(|v| v * s);
    }
    out
}

/// Effective matrix of a layer, output scaling included.
pub fn effective_weight(params: &ParamStore, layer: &ProjectedLayer) -> Matrix {
    let w = params.get(layer.weight);
    match &layer.row_scale {
        Some(s) => row_scaled(w, s),
        None => w.clone(),
    }
}

/// Walks `layers` in order, scaling each weight by `1 / max(1, A·‖W̄‖₂/λ)`
/// (`W̄` includes any output row scaling)
/// and updating the running bound `A`. `iterations` carries one warm-start
/// vector per layer.
pub fn project_layers(
    params: &mut ParamStore,
    layers: &[ProjectedLayer],
    lambda: f64,
    action_norm: f64,
    iterations: &mut [PowerIteration],
) -> Vec<LayerProjection> {
    let mut a = action_norm;
    let mut out = Vec::with_capacity(layers.len());
    for (layer, pi) in layers.iter().zip(iterations.iter_mut()) {
        let w = params.get_mut(layer.weight);
        let scaled = layer.row_scale.as_ref().map(|s| row_scaled(w, s));
        let norm = pi.estimate(
            scaled.as_ref().unwrap_or(&*w).view(),
            PROJECTION_MIN_ITERATIONS,
            PROJECTION_MAX_ITERATIONS,
            FULL_TOLERANCE,
        );
        let ratio = a * norm / lambda;
        let scale = if ratio > 1.0 { 1.0 / ratio } else { 1.0 };
        if scale < 1.0 {
            w.mapv_inplace(|v| v * scale);
        }
        out.push(LayerProjection {
            input_bound: a,
            norm_before: norm,
            scale,
            norm_after: norm * scale,
            lambda,
        });
        a = next_input_bound(params, layer);
    }
    out
}

/// Stateful projector that keeps power-iteration vectors across calls.
#[derive(Clone, Debug)]
pub struct Projector {
    pub config: LipschitzConfig,
    pub lambda: f64,
    layers: Vec<ProjectedLayer>,
    iterations: Vec<PowerIteration>,
}

impl Projector {
    pub fn new(model: &ActionModel, config: LipschitzConfig) -> Result<Self> {
        config.validate()?;
        if model.family() == Family::HyperLinear && !config.include_hyperlinear {
            return Err(Error::Config(
                "projection of hyper-linear decoders is disabled; enable it explicitly".into(),
            ));
        }
        let layers = model.projection_layers();
        if layers.iter().any(|l| !l.activation.is_odd()) {
            return Err(Error::Config("projected layers must use odd activations".into()));
        }
        Ok(Projector {
            lambda: config.layer_bound(layers.len()),
            iterations: vec![PowerIteration::new(); layers.len()],
            layers,
            config,
        })
    }

    pub fn project(&mut self, model: &mut ActionModel) -> Vec<LayerProjection> {
        project_layers(
            &mut model.params,
            &self.layers,
            self.lambda,
            self.config.action_norm,
            &mut self.iterations,
        )
    }
}

/// One-shot projection of a model's decoder.
pub fn lipschitz_project(model: &mut ActionModel, config: &LipschitzConfig) -> Result<Vec<LayerProjection>> {
    Ok(Projector::new(model, *config)?.project(model))
}

/// Per-layer `(A, ‖H̄‖₂, λ)` of the current weights, fully converged, without
/// modifying anything.
pub fn layer_bounds(model: &ActionModel, config: &LipschitzConfig) -> Result<Vec<LayerProjection>> {
    let params = &model.params;
    let layers = model.projection_layers();
    let lambda = config.layer_bound(layers.len());
    let mut a = config.action_norm;
    let mut out = Vec::new();
    for layer in &layers {
        let norm = crate::autodiff::spectral_norm(&effective_weight(params, layer));
        out.push(LayerProjection {
            input_bound: a,
            norm_before: norm,
            scale: 1.0,
            norm_after: norm,
            lambda,
        });
        a = next_input_bound(params, layer);
    }
    Ok(out)
}

/// Product of the per-layer bounds; the network's Lipschitz bound in `a`
/// implied by the projection.
pub fn implied_bound(projections: &[LayerProjection]) -> f64 {
    projections.iter().map(|p| p.lambda).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{spectral_norm, Activation};
    use ndarray::array;

    fn dense(params: &mut ParamStore, w: crate::autodiff::Matrix) -> ProjectedLayer {
        ProjectedLayer {
            weight: params.add("w", w),
            activation: Activation::Identity,
            row_scale: None,
        }
    }

    #[test]
    fn scales_down_to_lambda() {
        let mut params = ParamStore::new();
        let layer = dense(&mut params, array![[4.0, 0.0], [0.0, 1.0]]);
        let mut pis = vec![PowerIteration::new()];
        let out = project_layers(&mut params, std::slice::from_ref(&layer), 2.0, 1.0, &mut pis);
        assert!((spectral_norm(params.get(layer.weight)) - 2.0).abs() < 1e-12);
        assert!((out[0].scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn output_scaling_counts_toward_the_norm() {
        let mut params = ParamStore::new();
        let mut layer = dense(&mut params, array![[1.0, 0.0], [0.0, 1.0]]);
        layer.row_scale = Some(vec![4.0, 1.0]);
        let mut pis = vec![PowerIteration::new()];
        let out = project_layers(&mut params, std::slice::from_ref(&layer), 2.0, 1.0, &mut pis);
        assert!((out[0].norm_before - 4.0).abs() < 1e-12);
        assert!((spectral_norm(&effective_weight(&params, &layer)) - 2.0).abs() < 1e-12);
        assert_eq!(params.get(layer.weight), &array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn satisfied_layer_is_untouched() {
        let mut params = ParamStore::new();
        let layer = dense(&mut params, array![[0.5, 0.1], [0.0, 0.2]]);
        let before = params.get(layer.weight).clone();
        let mut pis = vec![PowerIteration::new()];
        project_layers(&mut params, std::slice::from_ref(&layer), 2.0, 1.0, &mut pis);
        assert_eq!(params.get(layer.weight), &before);
    }

    #[test]
    fn running_bound_uses_row_sums() {
        let mut params = ParamStore::new();
        let first = ProjectedLayer {
            weight: params.add("a", array![[0.1, -0.2], [0.3, 0.0]]),
            activation: Activation::Tanh,
            row_scale: None,
        };
        let second = dense(&mut params, array![[1.0, 1.0]]);
        let mut pis = vec![PowerIteration::new(), PowerIteration::new()];
        let out = project_layers(&mut params, &[first, second], 10.0, 1.0, &mut pis);
        let expected = (0.3f64.tanh().powi(2) * 2.0).sqrt();
        assert!((out[1].input_bound - expected).abs() < 1e-15);
    }

    #[test]
    fn default_action_norm_and_layer_bound() {
        let cfg = LipschitzConfig::new(0.125);
        assert_eq!(cfg.action_norm, std::f64::consts::SQRT_2);
        assert!((cfg.layer_bound(3) - 0.5).abs() < 1e-15);
        assert!(LipschitzConfig::new(0.0).validate().is_err());
        let mut bad = cfg;
        bad.layer = Some(-1.0);
        assert!(bad.validate().is_err());
    }
}
