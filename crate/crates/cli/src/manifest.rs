use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::exit::{CliError, CliResult};

pub const MANIFEST_FORMAT: &str = "latentmap-manifest";

/// A file and the SHA-256 of its bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = crate::commands::at_path(path, std::fs::read(path).map_err(latentmap::Error::from))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to repeat a run: the fully resolved command (flags,
/// config entries and environment already applied), its seed, and digests of
/// what it read and wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// The argument vector as typed.
    pub args: Vec<String>,
    pub config: Command,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Not part of any output file, so not part of reproduction.
    pub wall_clock_s: f64,
}

impl ExperimentManifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Core(latentmap::Error::Parse(e.to_string())))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = crate::commands::at_path(path, std::fs::read_to_string(path).map_err(latentmap::Error::from))?;
        let m: ExperimentManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Core(latentmap::Error::Parse(format!("manifest: {e}"))))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Core(latentmap::Error::Parse(format!(
                "unexpected manifest format '{}'",
                m.format
            ))));
        }
        Ok(m)
    }
}

/// Default manifest location next to the primary output.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
