//! Experiment driver and live session service for learned action maps.
//!
//! Every run except `serve` and `rerun` writes an [`ExperimentManifest`];
//! `rerun` repeats the recorded command and compares output digests.

pub mod cli;
pub mod commands;
pub mod config;
pub mod exit;
pub mod manifest;
pub mod server;
pub mod session;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

pub use cli::{Cli, Command};
pub use exit::{CliError, CliResult};
pub use manifest::{ExperimentManifest, FileDigest};

use commands::RunOutcome;

/// Parses `args` (including the program name), applies any config file and
/// runs the command.
pub fn run_from<I, T>(args: I) -> CliResult<RunOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let expanded = config::expand_config(raw.clone(), cli::SUBCOMMANDS)?;
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(RunOutcome::default());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let typed = raw.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    run_command(&cli.command, typed, cli.manifest)
}

/// Runs a resolved command and, for data-producing commands, records a
/// manifest beside the primary output (or at `manifest`).
pub fn run_command(command: &Command, typed: Vec<String>, manifest: Option<PathBuf>) -> CliResult<RunOutcome> {
    let started = Instant::now();
    let outcome = execute(command)?;
    if matches!(command, Command::Serve(_) | Command::Rerun(_)) {
        return Ok(outcome);
    }
    let primary = outcome
        .outputs
        .first()
        .ok_or_else(|| CliError::Usage("command produced no output".into()))?;
    let path = manifest.unwrap_or_else(|| manifest::manifest_path_for(primary));
    let record = ExperimentManifest {
        format: manifest::MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        args: typed,
        config: command.clone(),
        seed: command.seed(),
        inputs: outcome.inputs.iter().map(|p| FileDigest::of(p)).collect::<CliResult<_>>()?,
        outputs: outcome.outputs.iter().map(|p| FileDigest::of(p)).collect::<CliResult<_>>()?,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    record.save(&path)?;
    Ok(outcome)
}

fn execute(command: &Command) -> CliResult<RunOutcome> {
    match command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Serve(a) => commands::serve_cmd(a),
        Command::Rerun(a) => rerun(&a.manifest_file),
    }
}

/// Checks recorded input digests, repeats the command and compares every
/// output digest. Any difference is a [`CliError::Mismatch`].
pub fn rerun(path: &std::path::Path) -> CliResult<RunOutcome> {
    let m = ExperimentManifest::load(path)?;
    if matches!(m.config, Command::Serve(_) | Command::Rerun(_)) {
        return Err(CliError::Usage(format!("'{}' runs cannot be repeated", m.command)));
    }
    for input in &m.inputs {
        let now = manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(CliError::Core(latentmap::Error::Input(format!(
                "input {} changed since the recorded run",
                input.path.display()
            ))));
        }
    }
    let outcome = execute(&m.config)?;
    let mut checked = 0;
    for out in &m.outputs {
        let now = manifest::sha256_file(&out.path)?;
        if now != out.sha256 {
            return Err(CliError::Mismatch(format!("{} differs from the recorded run", out.path.display())));
        }
        checked += 1;
    }
    Ok(RunOutcome {
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        summary: format!("{checked} outputs reproduced bit-exactly"),
    })
}
