use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action_map::{check_batch, check_cotangents, ActionMap, Jacobians};
use super::mlp::Mlp;
use super::space::ActionSpace;
use crate::autodiff::{gram_schmidt, Activation, Matrix, ParamId, ParamStore, Tape, TensorLayer, Var};
use crate::error::shape_err;
use crate::{Error, Result};

/// Residual norm below which deployment orthonormalization gives up.
pub const GRAM_SCHMIDT_TOL: f64 = 1e-10;

/// Decoder family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// MLP over the concatenated `(x, a)`.
    Ae,
    /// Hypernetwork `H(x) ∈ R^{d×n}` applied linearly to `a`.
    #[serde(rename = "scl")]
    HyperLinear,
    /// Tensor layers `W(x) = H ⊗ φ(x) (+ B)` with odd activations.
    Scn,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ae => "ae",
            Family::HyperLinear => "scl",
            Family::Scn => "scn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(Family::Ae),
            "scl" | "hyperlinear" => Ok(Family::HyperLinear),
            "scn" => Ok(Family::Scn),
            other => Err(Error::Config(format!("unknown decoder family '{other}'"))),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
///
/// `decoder_hidden` holds the MLP widths for AE/SCL and the tensor-layer
/// widths along the action path for SCN. `feature_hidden` and `features`
/// describe the SCN state network `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub family: Family,
    pub state_dim: usize,
    pub action_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub encoder_bias: bool,
    pub decoder_hidden: Vec<usize>,
    pub feature_hidden: Vec<usize>,
    pub features: usize,
    pub activation: Activation,
    pub strict_odd: bool,
    pub action_space: ActionSpace,
}

impl Architecture {
    /// Default layer sizes: 256-wide MLPs; SCN with 48 state features and
    /// 32-wide tensor layers.
    pub fn new(family: Family, state_dim: usize, action_dim: usize) -> Self {
        let (decoder_hidden, feature_hidden, features) = match family {
            Family::Ae | Family::HyperLinear => (vec![256, 256], vec![], 0),
            Family::Scn => (vec![32, 32], vec![48], 48),
        };
        Architecture {
            family,
            state_dim,
            action_dim,
            encoder_hidden: vec![256, 256],
            encoder_bias: true,
            decoder_hidden,
            feature_hidden,
            features,
            activation: Activation::Tanh,
            strict_odd: true,
            action_space: ActionSpace::new(action_dim, 1.0, std::f64::consts::SQRT_2)
                .unwrap_or_else(|_| ActionSpace::unit_box(action_dim.max(1))),
        }
    }

    /// Uniform width for every hidden layer (all MLPs and tensor layers).
    pub fn with_width(mut self, width: usize) -> Self {
        self.encoder_hidden = vec![width; self.encoder_hidden.len()];
        if self.family != Family::Scn {
            self.decoder_hidden = vec![width; self.decoder_hidden.len()];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("state and action dimensions must be positive".into()));
        }
        if self.action_space.dim != self.action_dim {
            return Err(Error::Config(format!(
                "action space has dimension {}, architecture {}",
                self.action_space.dim, self.action_dim
            )));
        }
        self.action_space.validate()?;
        let widths = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.feature_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.family == Family::Scn {
            if self.features == 0 {
                return Err(Error::Config("SCN needs at least one state feature".into()));
            }
            if !self.activation.is_odd() {
                return Err(Error::Config(format!(
                    "activation '{}' is not odd",
                    self.activation
                )));
            }
        }
        Ok(())
    }

    /// Number of layers subject to Lipschitz projection.
    pub fn decoder_depth(&self) -> usize {
        self.decoder_hidden.len() + 1
    }
}

/// Fixed input scalings stored with the model.
///
/// States enter every network as `(x - mean) · scale`. Velocities are
/// measured in units of the per-joint RMS `velocity_rms` with no shift: the
/// encoder divides its velocity input by it and the decoder multiplies its
/// network output by it, so `ẋ = 0` and `f(x, 0) = 0` are unaffected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub state_mean: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub velocity_rms: Vec<f64>,
}

impl Normalization {
    pub fn identity(state_dim: usize) -> Self {
        Normalization {
            state_mean: vec![0.0; state_dim],
            state_scale: vec![1.0; state_dim],
            velocity_rms: vec![1.0; state_dim],
        }
    }

    /// Per-column standardization of states and RMS scaling of velocities.
    /// A joint that never moves borrows the overall RMS.
    pub fn fit(states: &Matrix, velocities: &Matrix) -> Self {
        let rows = states.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(states.ncols());
        let mut scale = Vec::with_capacity(states.ncols());
        for col in states.columns() {
            let m = col.sum() / rows;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / rows;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 { 1.0 / sd } else { 1.0 });
        }
        let count = velocities.len().max(1) as f64;
        let overall = (velocities.iter().map(|v| v * v).sum::<f64>() / count).sqrt();
        let overall = if overall > 1e-300 { overall } else { 1.0 };
        let vrows = velocities.nrows().max(1) as f64;
        let velocity_rms = velocities
            .columns()
            .into_iter()
            .map(|c| {
                let r = (c.iter().map(|v| v * v).sum::<f64>() / vrows).sqrt();
                if r > 1e-9 * overall { r } else { overall }
            })
            .collect();
        Normalization {
            state_mean: mean,
            state_scale: scale,
            velocity_rms,
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        let lens = [self.state_mean.len(), self.state_scale.len(), self.velocity_rms.len()];
        if lens.iter().any(|&l| l != state_dim) {
            return Err(Error::Config(format!(
                "normalization covers {lens:?} columns, state dimension is {state_dim}"
            )));
        }
        let finite = self
            .state_mean
            .iter()
            .chain(&self.state_scale)
            .all(|v| v.is_finite());
        if !finite || !self.velocity_rms.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Config(
                "normalization constants must be finite, velocity scales positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    Ae(Mlp),
    HyperLinear(Mlp),
    Scn { features: Mlp, layers: Vec<TensorLayer> },
}

/// A layer visited by the Lipschitz projection: the weight (or flattened
/// tensor), the activation that follows it and, for the output layer, the
/// fixed per-row output scaling applied after it.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedLayer {
    pub weight: ParamId,
    pub activation: Activation,
    pub row_scale: Option<Vec<f64>>,
}

/// Encoder plus decoder with their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionModel {
    pub arch: Architecture,
    pub norm: Normalization,
    pub params: ParamStore,
    pub encoder: Mlp,
    pub decoder: Decoder,
}

impl ActionModel {
    /// Builds a freshly initialized model. Parameters are declared encoder
    /// first, then decoder, layer by layer.
    pub fn new(arch: Architecture, norm: Normalization, seed: u64) -> Result<Self> {
        arch.validate()?;
        norm.validate(arch.state_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d, n, act) = (arch.state_dim, arch.action_dim, arch.activation);

        let enc_sizes = sizes(2 * d, &arch.encoder_hidden, n);
        let encoder = Mlp::init(&mut params, "encoder", &enc_sizes, arch.encoder_bias, act, act, &mut rng);

        let decoder = match arch.family {
            Family::Ae => Decoder::Ae(Mlp::init(
                &mut params,
                "decoder",
                &sizes(d + n, &arch.decoder_hidden, d),
                true,
                act,
                Activation::Identity,
                &mut rng,
            )),
            Family::HyperLinear => Decoder::HyperLinear(Mlp::init(
                &mut params,
                "hyper",
                &sizes(d, &arch.decoder_hidden, d * n),
                true,
                act,
                Activation::Identity,
                &mut rng,
            )),
            Family::Scn => {
                let features = Mlp::init(
                    &mut params,
                    "features",
                    &sizes(d, &arch.feature_hidden, arch.features),
                    true,
                    act,
                    act,
                    &mut rng,
                );
                let widths = sizes(n, &arch.decoder_hidden, d);
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        TensorLayer::init(
                            &mut params,
                            &format!("tensor.{i}"),
                            w[1],
                            arch.features,
                            w[0],
                            !arch.strict_odd,
                            &mut rng,
                        )
                    })
                    .collect();
                Decoder::Scn { features, layers }
            }
        };
        Ok(ActionModel {
            arch,
            norm,
            params,
            encoder,
            decoder,
        })
    }

    pub fn family(&self) -> Family {
        self.arch.family
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.arch.action_space
    }

    fn normalized_state(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.affine(x, &self.norm.state_mean, &self.norm.state_scale)
    }

    /// Records `g(x, ẋ)` for raw states and velocities.
    pub fn record_encoder(&self, tape: &mut Tape<'_>, x: Var, xdot: Var) -> Result<Var> {
        let xn = self.normalized_state(tape, x)?;
        let vn = self.standardize(tape, xdot)?;
        let input = tape.concat(xn, vn)?;
        self.encoder.record(tape, input)
    }

    /// Records `ẋ` divided by the per-joint velocity RMS.
    pub fn standardize(&self, tape: &mut Tape<'_>, v: Var) -> Result<Var> {
        let inv: Vec<f64> = self.norm.velocity_rms.iter().map(|r| 1.0 / r).collect();
        tape.affine(v, &vec![0.0; inv.len()], &inv)
    }

    /// Scale of each output row of the last decoder layer.
    fn output_row_scale(&self) -> Vec<f64> {
        let n = self.arch.action_dim;
        match self.arch.family {
            Family::HyperLinear => (0..self.arch.state_dim * n)
                .map(|r| self.norm.velocity_rms[r / n])
                .collect(),
            _ => self.norm.velocity_rms.clone(),
        }
    }

    fn scale_output(&self, tape: &mut Tape<'_>, out: Var) -> Result<Var> {
        let s = self.output_row_scale();
        tape.affine(out, &vec![0.0; s.len()], &s)
    }

    /// Records the flattened `H(x)` of a hyper-linear decoder (row-major
    /// `d × n`).
    pub fn record_hyper(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match &self.decoder {
            Decoder::HyperLinear(mlp) => {
                let xn = self.normalized_state(tape, x)?;
                let h = mlp.record(tape, xn)?;
                self.scale_output(tape, h)
            }
            _ => Err(Error::Config(format!(
                "{} decoder has no hypernetwork",
                self.arch.family
            ))),
        }
    }

    /// Records `f(x, a)` in training mode.
    pub fn record_decoder(&self, tape: &mut Tape<'_>, x: Var, a: Var) -> Result<Var> {
        match &self.decoder {
            Decoder::Ae(mlp) => {
                let xn = self.normalized_state(tape, x)?;
                let input = tape.concat(xn, a)?;
                let out = mlp.record(tape, input)?;
                self.scale_output(tape, out)
            }
            Decoder::HyperLinear(_) => {
                let h = self.record_hyper(tape, x)?;
                tape.matvec(h, a)
            }
            Decoder::Scn { features, layers } => {
                let xn = self.normalized_state(tape, x)?;
                let phi = features.record(tape, xn)?;
                let mut z = a;
                for (i, layer) in layers.iter().enumerate() {
                    z = layer.record(tape, phi, z)?;
                    if i + 1 < layers.len() && self.arch.activation != Activation::Identity {
                        z = tape.activation(z, self.arch.activation);
                    }
                }
                self.scale_output(tape, z)
            }
        }
    }

    pub fn encode_batch(&self, states: &Matrix, velocities: &Matrix) -> Result<Matrix> {
        let d = self.arch.state_dim;
        if states.ncols() != d || velocities.ncols() != d || states.nrows() != velocities.nrows() {
            return Err(shape_err(format!(
                "encoder expects {d}-dim states and velocities, got {:?} and {:?}",
                states.dim(),
                velocities.dim()
            )));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(states.clone());
        let v = tape.constant(velocities.clone());
        let out = self.record_encoder(&mut tape, x, v)?;
        Ok(tape.value(out).clone())
    }

    /// `g(x, ẋ)`; not clamped.
    pub fn encode(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        let out = self.encode_batch(&row_of(x), &row_of(xdot))?;
        Ok(out.row(0).to_vec())
    }

    /// `H(x)` as a `d × n` matrix.
    pub fn hyper_matrix(&self, x: &[f64]) -> Result<Matrix> {
        let d = self.arch.state_dim;
        if x.len() != d {
            return Err(shape_err(format!("state of length {}, expected {d}", x.len())));
        }
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(row_of(x));
        let h = self.record_hyper(&mut tape, xv)?;
        let flat = tape.value(h).row(0).to_vec();
        Ok(Array2::from_shape_vec((d, self.arch.action_dim), flat).expect("row-major d × n"))
    }

    /// Hyper-linear decoding; `deploy` orthonormalizes the columns of `H(x)`
    /// first. Other families ignore the flag.
    pub fn decode_mode(&self, states: &Matrix, actions: &Matrix, deploy: bool) -> Result<Matrix> {
        check_batch(self, states, actions)?;
        if !(deploy && self.arch.family == Family::HyperLinear) {
            let mut tape = Tape::new(&self.params);
            let x = tape.constant(states.clone());
            let a = tape.constant(actions.clone());
            let out = self.record_decoder(&mut tape, x, a)?;
            return Ok(tape.value(out).clone());
        }
        let (d, n) = (self.arch.state_dim, self.arch.action_dim);
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(states.clone());
        let h = self.record_hyper(&mut tape, x)?;
        let flat = tape.value(h);
        let mut out = Array2::zeros((states.nrows(), d));
        for b in 0..states.nrows() {
            let m = Array2::from_shape_vec((d, n), flat.row(b).to_vec()).expect("row-major d × n");
            let q = gram_schmidt(&m, GRAM_SCHMIDT_TOL)?;
            out.row_mut(b).assign(&q.dot(&actions.row(b)));
        }
        Ok(out)
    }

    /// Many actions at one state. Hyper-linear decoders evaluate `H(x)` (or
    /// `Q(x)`) once.
    pub fn decode_many(&self, x: &[f64], actions: &Matrix, deploy: bool) -> Result<Matrix> {
        if x.len() != self.arch.state_dim || actions.ncols() != self.arch.action_dim {
            return Err(shape_err(format!(
                "state of length {} with {}-dim actions, expected {} and {}",
                x.len(),
                actions.ncols(),
                self.arch.state_dim,
                self.arch.action_dim
            )));
        }
        match &self.decoder {
            Decoder::HyperLinear(_) => {
                let h = self.hyper_matrix(x)?;
                let m = if deploy { gram_schmidt(&h, GRAM_SCHMIDT_TOL)? } else { h };
                Ok(actions.dot(&m.t()))
            }
            Decoder::Scn { features, layers } => {
                let mut tape = Tape::new(&self.params);
                let xv = tape.constant(row_of(x));
                let xn = self.normalized_state(&mut tape, xv)?;
                let phi_var = features.record(&mut tape, xn)?;
                let phi = tape.value(phi_var).row(0).to_vec();
                let mut z = actions.clone();
                for (i, layer) in layers.iter().enumerate() {
                    z = z.dot(&layer.contract(&self.params, &phi)?.t());
                    if i + 1 < layers.len() {
                        let act = self.arch.activation;
                        z.mapv_inplace(|v| act.apply(v));
                    }
                }
                for mut r in z.rows_mut() {
                    for (v, s) in r.iter_mut().zip(&self.norm.velocity_rms) {
                        *v *= s;
                    }
                }
                Ok(z)
            }
            Decoder::Ae(_) => {
                let states = Array2::from_shape_fn((actions.nrows(), x.len()), |(_, j)| x[j]);
                self.decode_mode(&states, actions, deploy)
            }
        }
    }

    /// The map used at deployment (orthonormalized for hyper-linear models).
    pub fn deployed(&self) -> Deployed<'_> {
        Deployed(self)
    }

    /// Decoder layers visited by the Lipschitz projection, in order.
    pub fn projection_layers(&self) -> Vec<ProjectedLayer> {
        let mut out: Vec<ProjectedLayer> = match &self.decoder {
            Decoder::Ae(mlp) | Decoder::HyperLinear(mlp) => mlp
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| ProjectedLayer {
                    weight: l.weight,
                    activation: mlp.activation_after(i),
                    row_scale: None,
                })
                .collect(),
            Decoder::Scn { layers, .. } => layers
                .iter()
                .enumerate()
                .map(|(i, l)| ProjectedLayer {
                    weight: l.tensor,
                    activation: if i + 1 < layers.len() {
                        self.arch.activation
                    } else {
                        Activation::Identity
                    },
                    row_scale: None,
                })
                .collect(),
        };
        if let Some(last) = out.last_mut() {
            last.row_scale = Some(self.output_row_scale());
        }
        out
    }

    /// Parameters belonging to the decoder side (everything after the
    /// encoder).
    pub fn decoder_params(&self) -> Vec<ParamId> {
        let enc: Vec<ParamId> = self
            .encoder
            .layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .collect();
        self.params.ids().filter(|id| !enc.contains(id)).collect()
    }
}

impl ActionMap for ActionModel {
    fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    fn action_dim(&self) -> usize {
        self.arch.action_dim
    }

    fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        self.decode_mode(states, actions, false)
    }

    fn decode_at(&self, x: &[f64], actions: &Matrix) -> Result<Matrix> {
        self.decode_many(x, actions, false)
    }

    /// One reverse pass: each row is replicated `d` times and seeded with
    /// the matching basis vector.
    fn jacobians(&self, states: &Matrix, actions: &Matrix) -> Result<Jacobians> {
        check_batch(self, states, actions)?;
        let (batch, d) = states.dim();
        let n = actions.ncols();
        let rows = batch * d;
        let xs = Array2::from_shape_fn((rows, d), |(r, j)| states[(r / d, j)]);
        let acts = Array2::from_shape_fn((rows, n), |(r, j)| actions[(r / d, j)]);
        let seed = Array2::from_shape_fn((rows, d), |(r, i)| if r % d == i { 1.0 } else { 0.0 });
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(xs);
        let av = tape.input(acts);
        let out = self.record_decoder(&mut tape, xv, av)?;
        let grads = tape.backward(out, &seed)?;
        let gx = grads.wrt_or_zero(xv, (rows, d));
        let ga = grads.wrt_or_zero(av, (rows, n));
        let block = |g: &Matrix, b: usize| g.slice(ndarray::s![b * d..(b + 1) * d, ..]).to_owned();
        Ok(Jacobians {
            states: (0..batch).map(|b| block(&gx, b)).collect(),
            actions: (0..batch).map(|b| block(&ga, b)).collect(),
        })
    }

    fn vjp_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
        cotangents: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        check_batch(self, states, actions)?;
        check_cotangents(self, states, cotangents)?;
        let mut tape = Tape::new(&self.params);
        let xv = tape.input(states.clone());
        let av = tape.input(actions.clone());
        let out = self.record_decoder(&mut tape, xv, av)?;
        let grads = tape.backward(out, cotangents)?;
        Ok((
            grads.wrt_or_zero(xv, states.dim()),
            grads.wrt_or_zero(av, actions.dim()),
        ))
    }
}

/// Deployment view of an [`ActionModel`]. Hyper-linear decoders apply the
/// orthonormalized `Q(x)`; other families are unchanged.
#[derive(Clone, Copy, Debug)]
pub struct Deployed<'m>(pub &'m ActionModel);

impl ActionMap for Deployed<'_> {
    fn state_dim(&self) -> usize {
        self.0.arch.state_dim
    }

    fn action_dim(&self) -> usize {
        self.0.arch.action_dim
    }

    fn decode_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        self.0.decode_mode(states, actions, true)
    }

    fn decode_at(&self, x: &[f64], actions: &Matrix) -> Result<Matrix> {
        self.0.decode_many(x, actions, true)
    }

    fn jacobians(&self, states: &Matrix, actions: &Matrix) -> Result<Jacobians> {
        if self.0.arch.family == Family::HyperLinear {
            check_batch(self, states, actions)?;
            return super::action_map::fd_jacobians(self, states, actions);
        }
        self.0.jacobians(states, actions)
    }

    fn vjp_batch(
        &self,
        states: &Matrix,
        actions: &Matrix,
        cotangents: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        if self.0.arch.family == Family::HyperLinear {
            check_batch(self, states, actions)?;
            check_cotangents(self, states, cotangents)?;
            let jac = self.jacobians(states, actions)?;
            return Ok(super::action_map::apply_vjp(&jac, cotangents));
        }
        self.0.vjp_batch(states, actions, cotangents)
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

fn row_of(v: &[f64]) -> Matrix {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}
