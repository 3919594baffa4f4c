use std::fmt;

/// Failure of a CLI run, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown names, unusable configuration.
    Usage(String),
    Core(latentmap::Error),
    /// A rerun produced different bytes than its manifest recorded.
    Mismatch(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use latentmap::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::Config(_)) => EXIT_USAGE,
            CliError::Core(E::Input(_) | E::Parse(_) | E::Io(_) | E::Shape(_)) => EXIT_DATA,
            CliError::Core(_) | CliError::Mismatch(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m.trim_end()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Mismatch(m) => write!(f, "reproduction mismatch: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<latentmap::Error> for CliError {
    fn from(e: latentmap::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
