use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const SUBCOMMANDS: &[&str] = &["gen-data", "train", "eval", "serve", "rerun"];

#[derive(Parser, Debug, Clone)]
#[command(name = "latentmap", version, about = "Learned low-dimensional action maps: data, training, evaluation and live sessions")]
pub struct Cli {
    /// `key=value` file whose entries act as flags of the subcommand.
    #[arg(long, global = true, env = "LATENTMAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true, env = "LATENTMAP_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic reaching dataset for a planar arm.
    GenData(GenDataArgs),
    /// Train an action model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Serve live teleoperation sessions over WebSocket.
    Serve(ServeArgs),
    /// Repeat a recorded run and verify its outputs byte for byte.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Serve(_) => "serve",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::GenData(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::Eval(a) => Some(a.seed),
            Command::Serve(_) | Command::Rerun(_) => None,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    #[arg(long, env = "LATENTMAP_TRAJECTORIES", default_value_t = 10)]
    pub trajectories: usize,
    /// Raw samples per demonstration.
    #[arg(long, env = "LATENTMAP_STEPS", default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, env = "LATENTMAP_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Exponential smoothing factor.
    #[arg(long, env = "LATENTMAP_GAMMA", default_value_t = 0.2)]
    pub gamma: f64,
    /// Keep every `stride`-th smoothed sample.
    #[arg(long, env = "LATENTMAP_STRIDE", default_value_t = 3)]
    pub stride: usize,
    /// Link lengths; the default is the five-link planar arm.
    #[arg(long, env = "LATENTMAP_LINKS", value_delimiter = ',')]
    pub links: Option<Vec<f64>>,
    /// Symmetric joint limit in radians.
    #[arg(long, env = "LATENTMAP_JOINT_LIMIT", default_value_t = 2.5)]
    pub joint_limit: f64,
    #[arg(long, env = "LATENTMAP_OUT")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ae,
    /// AE trained with the reversibility regularizer.
    AeReg,
    /// State-conditioned linear map.
    Scl,
    Scn,
    /// SCN trained with the reversibility regularizer.
    ScnReg,
}

impl ModelKind {
    pub fn family(self) -> latentmap::Family {
        use latentmap::Family;
        match self {
            ModelKind::Ae | ModelKind::AeReg => Family::Ae,
            ModelKind::Scl => Family::HyperLinear,
            ModelKind::Scn | ModelKind::ScnReg => Family::Scn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "ae",
            ModelKind::AeReg => "ae-reg",
            ModelKind::Scl => "scl",
            ModelKind::Scn => "scn",
            ModelKind::ScnReg => "scn-reg",
        }
    }

    pub fn regularized(self) -> bool {
        matches!(self, ModelKind::AeReg | ModelKind::ScnReg)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Tanh,
    Sin,
    Identity,
}

impl From<ActivationKind> for latentmap::Activation {
    fn from(a: ActivationKind) -> Self {
        match a {
            ActivationKind::Tanh => latentmap::Activation::Tanh,
            ActivationKind::Sin => latentmap::Activation::Sin,
            ActivationKind::Identity => latentmap::Activation::Identity,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long, env = "LATENTMAP_MODEL", value_enum)]
    pub model: ModelKind,
    #[arg(long, env = "LATENTMAP_DATA")]
    pub data: PathBuf,
    /// Checkpoint path; a `.report` file is written beside it.
    #[arg(long, env = "LATENTMAP_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "LATENTMAP_EPOCHS", default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, env = "LATENTMAP_BATCH_SIZE", default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, env = "LATENTMAP_LEARNING_RATE", default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Seeds initialization and batching.
    #[arg(long, env = "LATENTMAP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "LATENTMAP_SPLIT_SEED", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, env = "LATENTMAP_LATENT_DIM", default_value_t = 2)]
    pub latent_dim: usize,
    /// Hidden width of every network (default: architecture default).
    #[arg(long, env = "LATENTMAP_WIDTH")]
    pub width: Option<usize>,
    #[arg(long, env = "LATENTMAP_ACTIVATION", value_enum, default_value = "tanh")]
    pub activation: ActivationKind,
    /// SCN without output-layer bias, so `f(x, 0) = 0` exactly.
    #[arg(long, env = "LATENTMAP_STRICT_ODD", default_value_t = true, action = clap::ArgAction::Set)]
    pub strict_odd: bool,
    /// Global Lipschitz bound; enables projection after every step.
    #[arg(long, env = "LATENTMAP_LIPSCHITZ")]
    pub lipschitz: Option<f64>,
    /// Per-layer bound (default: the global bound split evenly over layers).
    #[arg(long, env = "LATENTMAP_LAYER_LIPSCHITZ")]
    pub layer_lipschitz: Option<f64>,
    #[arg(long, env = "LATENTMAP_WEIGHT_INVERSE", default_value_t = 1.0)]
    pub weight_inverse: f64,
    #[arg(long, env = "LATENTMAP_WEIGHT_ZERO_ACTION", default_value_t = 1.0)]
    pub weight_zero_action: f64,
    #[arg(long, env = "LATENTMAP_WEIGHT_ZERO_VELOCITY", default_value_t = 1.0)]
    pub weight_zero_velocity: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalKind {
    /// Test-split reconstruction error.
    Recon,
    /// Gap to the first-order expansion at zero action, by magnitude.
    Linearization,
    /// Certified-style estimates of M, L and E.
    Estimate,
    /// Forward/backward reversal errors against the bounds.
    Reversibility,
    /// Greedy simulated teleoperation on held-out tasks.
    Simteleop,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub kind: EvalKind,
    #[arg(long, env = "LATENTMAP_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "LATENTMAP_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "LATENTMAP_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "LATENTMAP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "LATENTMAP_SPLIT_SEED", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, env = "LATENTMAP_MAGNITUDES", value_delimiter = ',',
          default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2")]
    pub magnitudes: Vec<f64>,
    /// Integration step for the reversibility sweep.
    #[arg(long, env = "LATENTMAP_NU", default_value_t = 0.001)]
    pub nu: f64,
    #[arg(long, env = "LATENTMAP_DURATIONS", value_delimiter = ',', default_value = "10,100,1000")]
    pub durations: Vec<usize>,
    #[arg(long, env = "LATENTMAP_TRIALS", default_value_t = 20)]
    pub trials: usize,
    /// Fresh random action every forward step.
    #[arg(long, env = "LATENTMAP_RESAMPLE", default_value_t = false, action = clap::ArgAction::Set)]
    pub resample: bool,
    /// Reuse estimates written by `eval estimate`.
    #[arg(long, env = "LATENTMAP_ESTIMATES")]
    pub estimates: Option<PathBuf>,
    #[arg(long, env = "LATENTMAP_RESTARTS", default_value_t = 32)]
    pub restarts: usize,
    #[arg(long, env = "LATENTMAP_ASCENT_STEPS", default_value_t = 200)]
    pub ascent_steps: usize,
    #[arg(long, env = "LATENTMAP_CANDIDATES", default_value_t = 1024)]
    pub candidates: usize,
    #[arg(long, env = "LATENTMAP_TASKS", default_value_t = 10)]
    pub tasks: usize,
    /// Step budget per teleoperation task.
    #[arg(long, env = "LATENTMAP_BUDGET", default_value_t = 1000)]
    pub budget: usize,
    /// Via-point spacing along recorded paths, in radians.
    #[arg(long, env = "LATENTMAP_SPACING", default_value_t = latentmap::sim::DEFAULT_VIA_SPACING)]
    pub spacing: f64,
    /// Step sizes tried on validation tasks, as multiples of the calibrated one.
    #[arg(long, env = "LATENTMAP_NU_MULTIPLIERS", value_delimiter = ',', default_value = "0.5,1,2,4,8")]
    pub nu_multipliers: Vec<f64>,
    /// Trajectory log for `simteleop` (default: OUT with `.log.json`).
    #[arg(long, env = "LATENTMAP_LOG")]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct ServeArgs {
    /// `NAME=PATH`, repeatable; a bare path is named after its file stem.
    #[arg(long = "checkpoint", env = "LATENTMAP_CHECKPOINTS", value_delimiter = ',', required = true)]
    pub checkpoints: Vec<String>,
    /// Dataset used to calibrate the step size and to pick the arm and start state.
    #[arg(long, env = "LATENTMAP_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "LATENTMAP_BIND", default_value = "127.0.0.1:8765")]
    pub bind: String,
    /// Fixed step size for every model (default: calibrated per model).
    #[arg(long, env = "LATENTMAP_NU")]
    pub nu: Option<f64>,
    /// Directory for append-only session logs.
    #[arg(long, env = "LATENTMAP_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    pub manifest_file: PathBuf,
}
