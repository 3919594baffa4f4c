//! Flat `key=value` configuration files. Each entry becomes `--key=value`
//! right after the subcommand, so flags given on the command line (which come
//! later) take precedence, and both beat environment variables.

use std::ffi::OsString;
use std::path::Path;

use crate::exit::{CliError, CliResult};

pub const ENV_PREFIX: &str = "LATENTMAP_";

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

fn config_path(args: &[OsString]) -> Option<(usize, usize, OsString)> {
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return args.get(i + 1).map(|v| (i, 2, v.clone()));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some((i, 1, v.into()));
        }
    }
    None
}

/// Replaces `--config FILE` (or `LATENTMAP_CONFIG`) with the file's entries
/// as flags placed directly after the subcommand named in `subcommands`.
pub fn expand_config(args: Vec<OsString>, subcommands: &[&str]) -> CliResult<Vec<OsString>> {
    let mut args = args;
    let path = match config_path(&args) {
        Some((i, n, p)) => {
            args.drain(i..i + n);
            Some(p)
        }
        None => std::env::var_os(format!("{ENV_PREFIX}CONFIG")),
    };
    let Some(path) = path else {
        return Ok(args);
    };
    let entries = read_config(Path::new(&path))?;
    let at = args
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| CliError::Usage("a config file needs a subcommand".into()))?;
    let flags: Vec<OsString> = entries
        .into_iter()
        .map(|(k, v)| format!("--{k}={v}").into())
        .collect();
    args.splice(at + 1..at + 1, flags);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let cfg = parse_config("# c\nepochs = 5\n\nlearning_rate=0.01\n").unwrap();
        assert_eq!(cfg, vec![("epochs".into(), "5".into()), ("learning-rate".into(), "0.01".into())]);
        assert!(parse_config("novalue").is_err());
    }

    #[test]
    fn entries_go_after_the_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "epochs=5\n").unwrap();
        let args: Vec<OsString> = ["latentmap", "train", "--config", path.to_str().unwrap(), "--epochs", "7"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_config(args, &["train"]).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(out, vec!["latentmap", "train", "--epochs=5", "--epochs", "7"]);
    }
}
