use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use latentmap::data::{split_dataset, Dataset, Split};
use latentmap::maps::linearization_gap;
use latentmap::reversibility::{
    estimate_bounds, reports_to_csv, reversibility_experiment, BoundEstimates, EstimationBudget,
    ExperimentConfig, Region, Trajectory,
};
use latentmap::sim::{
    arm_from_header, calibrate_nu, generate_dataset, held_out_tasks, select_step_size, sim_teleop,
    ArmModel, DemoConfig, PreprocessConfig, TeleopTask,
};
use latentmap::training::{
    reconstruction_mse, train, LipschitzConfig, RegularizerWeights, TrainConfig,
};
use latentmap::{ActionModel, Architecture, Error, Normalization};
use serde::{Deserialize, Serialize};

use crate::cli::{EvalArgs, EvalKind, GenDataArgs, ServeArgs, TrainArgs};
use crate::exit::{CliError, CliResult};
use crate::server::Server;
use crate::session::{ModelEntry, ModelStore};

/// Train / validation / test fractions used by every command.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.9, 0.05, 0.05);

/// Files a command read and wrote, plus a one-line summary.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Core(Error::Parse(e.to_string())))
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Attaches the path to I/O failures.
pub fn at_path<T>(path: &Path, r: latentmap::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::Core(Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        ))),
        other => CliError::Core(other),
    })
}

pub fn arm_for(data: &Dataset) -> CliResult<ArmModel> {
    Ok(arm_from_header(data)?.unwrap_or_else(ArmModel::planar5))
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<RunOutcome> {
    let arm = match &args.links {
        Some(links) => ArmModel::new(links.clone(), vec![(-args.joint_limit, args.joint_limit); links.len()])?,
        None => {
            let mut arm = ArmModel::planar5();
            arm.limits = vec![(-args.joint_limit, args.joint_limit); arm.dof()];
            arm.validate()?;
            arm
        }
    };
    let demo = DemoConfig {
        steps: args.steps,
        ..DemoConfig::default()
    };
    let pre = PreprocessConfig {
        gamma: args.gamma,
        stride: args.stride,
    };
    let data = generate_dataset(&arm, args.trajectories, &demo, &pre, args.seed)?;
    write_file(&args.out, &data.to_text())?;
    Ok(RunOutcome {
        inputs: vec![],
        outputs: vec![args.out.clone()],
        summary: format!(
            "{} samples from {} trajectories written to {}",
            data.len(),
            args.trajectories,
            args.out.display()
        ),
    })
}

pub fn load_split(path: &Path, split_seed: u64) -> CliResult<(Dataset, Split)> {
    let data = at_path(path, Dataset::load(path))?;
    let split = split_dataset(&data, SPLIT_FRACTIONS, split_seed)?;
    Ok((data, split))
}

/// The architecture `train` builds for these flags.
pub fn architecture(args: &TrainArgs, state_dim: usize) -> Architecture {
    let mut arch = Architecture::new(args.model.family(), state_dim, args.latent_dim);
    if let Some(w) = args.width {
        arch = arch.with_width(w);
    }
    arch.activation = args.activation.into();
    arch.strict_odd = args.strict_odd;
    arch
}

pub fn lipschitz_config(args: &TrainArgs) -> Option<LipschitzConfig> {
    args.lipschitz.map(|global| LipschitzConfig {
        layer: args.layer_lipschitz,
        include_hyperlinear: args.model.family() == latentmap::Family::HyperLinear,
        ..LipschitzConfig::new(global)
    })
}

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        regularizer: args.model.regularized(),
        weights: RegularizerWeights {
            inverse: args.weight_inverse,
            zero_action: args.weight_zero_action,
            zero_velocity: args.weight_zero_velocity,
        },
        seed: args.seed,
    }
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<RunOutcome> {
    let (data, split) = load_split(&args.data, args.split_seed)?;
    let arch = architecture(args, data.state_dim());
    let norm = Normalization::fit(&split.train.states, &split.train.velocities);
    let mut model = ActionModel::new(arch, norm, args.seed)?;
    let cfg = train_config(args);
    let lip = lipschitz_config(args);
    let report = train(&mut model, &split, &cfg, lip.as_ref())?;
    log::info!("trained {} in {:.1} s", model.family(), report.wall_clock_s);
    model.save(&args.out)?;
    let report_path = sibling(&args.out, ".report");
    write_file(&report_path, &report.without_timing().to_key_values())?;
    let mse = report.test_mse.unwrap_or(f64::NAN);
    Ok(RunOutcome {
        inputs: vec![args.data.clone()],
        outputs: vec![args.out.clone(), report_path],
        summary: format!(
            "{} test_mse={mse:e} log10={:.3}",
            args.model.name(),
            mse.log10()
        ),
    })
}

/// Settings of the held-out teleoperation evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopSettings {
    pub tasks: usize,
    pub budget: usize,
    pub spacing: f64,
    pub nu_multipliers: Vec<f64>,
    pub seed: u64,
}

/// One evaluated task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub ratio: f64,
    pub start: Vec<f64>,
    pub target: Vec<f64>,
    pub via_points: Vec<Vec<f64>>,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleopLog {
    pub calibrated_nu: f64,
    pub nu: f64,
    pub validation_score: f64,
    pub tasks: Vec<TaskRecord>,
}

pub const TELEOP_CSV_HEADER: &str = "task,initial_distance,final_distance,ratio,steps";

/// Calibrates ν on the training split, picks the best multiple on
/// validation tasks and runs the test tasks.
pub fn run_teleop(model: &ActionModel, data: &Dataset, split: &Split, s: &TeleopSettings) -> CliResult<TeleopLog> {
    let arm = arm_for(data)?;
    let map = model.deployed();
    let space = model.action_space();
    let base = calibrate_nu(&map, &split.train.states, &split.train.velocities)?;
    let validation = held_out_tasks(data, &split.rows.validation, s.tasks, base, s.budget, s.spacing)?;
    let candidates: Vec<f64> = s.nu_multipliers.iter().map(|m| m * base).collect();
    let (nu, score) = select_step_size(&map, &validation, &candidates, space, Some(&arm.limits), s.seed)?;
    let tasks: Vec<TeleopTask> = held_out_tasks(data, &split.rows.test, s.tasks, nu, s.budget, s.spacing)?;
    let mut records = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.into_iter().enumerate() {
        let out = sim_teleop(&map, &task, space, Some(&arm.limits), s.seed.wrapping_add(i as u64))?;
        records.push(TaskRecord {
            task: i,
            initial_distance: out.initial_distance,
            final_distance: out.final_distance,
            ratio: out.final_distance / out.initial_distance,
            start: task.start,
            target: task.target,
            via_points: task.via_points,
            trajectory: out.trajectory,
        });
    }
    Ok(TeleopLog {
        calibrated_nu: base,
        nu,
        validation_score: score,
        tasks: records,
    })
}

pub fn teleop_csv(log: &TeleopLog) -> String {
    let mut out = String::from(TELEOP_CSV_HEADER);
    out.push('\n');
    for r in &log.tasks {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            r.task,
            r.initial_distance,
            r.final_distance,
            r.ratio,
            r.trajectory.steps()
        );
    }
    out
}

pub fn estimation_budget(args: &EvalArgs) -> EstimationBudget {
    EstimationBudget {
        restarts: args.restarts,
        steps: args.ascent_steps,
        candidates: args.candidates,
        seed: args.seed,
        ..EstimationBudget::default()
    }
}

pub fn estimate(model: &ActionModel, data: &Dataset, budget: &EstimationBudget) -> CliResult<BoundEstimates> {
    let region = Region::from_states(&data.states, 0.0)?;
    Ok(estimate_bounds(&model.deployed(), &region, model.action_space(), budget)?)
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<RunOutcome> {
    let model = at_path(&args.checkpoint, ActionModel::load(&args.checkpoint))?;
    let (data, split) = load_split(&args.data, args.split_seed)?;
    if data.state_dim() != model.arch.state_dim {
        return Err(CliError::Core(Error::Shape(format!(
            "dataset has state dimension {}, checkpoint expects {}",
            data.state_dim(),
            model.arch.state_dim
        ))));
    }
    let mut inputs = vec![args.checkpoint.clone(), args.data.clone()];
    let mut outputs = vec![args.out.clone()];
    let summary = match args.kind {
        EvalKind::Recon => {
            let mse = reconstruction_mse(&model, &split.test.states, &split.test.velocities)?;
            let text = format!(
                "family={}\nsamples={}\ntest_mse={mse:?}\nlog10_test_mse={:?}\n",
                model.family(),
                split.test.len(),
                mse.log10()
            );
            write_file(&args.out, &text)?;
            format!("test_mse={mse:e} log10={:.3}", mse.log10())
        }
        EvalKind::Linearization => {
            let records = linearization_gap(&model, &split.test.states, &args.magnitudes, args.seed)?;
            let mut text = String::from("magnitude,gap\n");
            for r in &records {
                let _ = writeln!(text, "{:?},{:?}", r.magnitude, r.gap);
            }
            write_file(&args.out, &text)?;
            format!("{} magnitudes", records.len())
        }
        EvalKind::Estimate => {
            let est = estimate(&model, &data, &estimation_budget(args))?;
            write_file(&args.out, &to_json(&est)?)?;
            let (m, l, e) = est.values();
            format!("M={m:e} L={l:e} E={e:e}")
        }
        EvalKind::Reversibility => {
            let est = match &args.estimates {
                Some(p) => {
                    inputs.push(p.clone());
                    let text = at_path(p, std::fs::read_to_string(p).map_err(Error::from))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Core(Error::Parse(format!("estimates: {e}"))))?
                }
                None => estimate(&model, &data, &estimation_budget(args))?,
            };
            let cfg = ExperimentConfig {
                durations: args.durations.clone(),
                trials: args.trials,
                nu: args.nu,
                resample: args.resample,
                seed: args.seed,
            };
            let reports = reversibility_experiment(&model.deployed(), &split.test.states, &est, &cfg)?;
            write_file(&args.out, &reports_to_csv(&reports))?;
            let ok = reports.iter().filter(|r| r.satisfied).count();
            format!("{ok}/{} durations within their bound", reports.len())
        }
        EvalKind::Simteleop => {
            let settings = TeleopSettings {
                tasks: args.tasks,
                budget: args.budget,
                spacing: args.spacing,
                nu_multipliers: args.nu_multipliers.clone(),
                seed: args.seed,
            };
            let log = run_teleop(&model, &data, &split, &settings)?;
            write_file(&args.out, &teleop_csv(&log))?;
            let log_path = args.log.clone().unwrap_or_else(|| sibling(&args.out, ".log.json"));
            write_file(&log_path, &to_json(&log)?)?;
            outputs.push(log_path);
            let ok = log.tasks.iter().filter(|r| r.ratio <= 0.1).count();
            format!("{ok}/{} tasks within 10% of their initial distance", log.tasks.len())
        }
    };
    Ok(RunOutcome { inputs, outputs, summary })
}

/// `NAME=PATH`, or a bare path named after its file stem.
pub fn parse_checkpoint_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

/// Loads checkpoints, the arm and the start state, and checks they agree.
pub fn model_store(args: &ServeArgs) -> CliResult<ModelStore> {
    let data = args.data.as_ref().map(|p| at_path(p, Dataset::load(p))).transpose()?;
    let arm = match &data {
        Some(d) => arm_for(d)?,
        None => ArmModel::planar5(),
    };
    let start = match &data {
        Some(d) if !d.is_empty() => d.states.row(0).to_vec(),
        _ => arm.home(),
    };
    let mut entries = Vec::new();
    for spec in &args.checkpoints {
        let (name, path) = parse_checkpoint_spec(spec);
        let model = at_path(&path, ActionModel::load(&path))?;
        let nu = match (args.nu, &data) {
            (Some(nu), _) => nu,
            (None, Some(d)) => calibrate_nu(&model.deployed(), &d.states, &d.velocities)?,
            (None, None) => {
                return Err(CliError::Usage("serve needs --nu or --data to calibrate the step size".into()))
            }
        };
        entries.push(ModelEntry {
            name,
            model: Arc::new(model),
            nu,
        });
    }
    Ok(ModelStore::new(entries, arm, start)?)
}

pub fn serve_cmd(args: &ServeArgs) -> CliResult<RunOutcome> {
    let store = model_store(args)?;
    let names = store.names();
    let server = Server::bind(&args.bind, store, args.log_dir.clone())?;
    log::info!("serving {names:?} on ws://{}", server.local_addr()?);
    eprintln!("listening on ws://{}", server.local_addr()?);
    let started = Instant::now();
    server.run()?;
    Ok(RunOutcome {
        summary: format!("served for {:.1} s", started.elapsed().as_secs_f64()),
        ..RunOutcome::default()
    })
}
