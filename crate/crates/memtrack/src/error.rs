use std::path::PathBuf;

/// Errors raised while reading or writing files.
#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] memtrack_core::Error),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io { path: path.into(), source }
    }
}

/// A syntax or value error in a configuration file or flag.
#[derive(Debug, thiserror::Error)]
#[error("{origin}{}: {message}", if *.line > 0 { format!(":{}", .line) } else { String::new() })]
pub struct ConfigError {
    /// File name, or `--flag` for command-line overrides.
    pub origin: String,
    /// 1-based line number; 0 for whole-file or flag errors.
    pub line: usize,
    pub message: String,
}

/// Failure classes of the command line, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Core(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<memtrack_core::Error> for CliError {
    fn from(e: memtrack_core::Error) -> Self {
        use memtrack_core::Error as E;
        match e {
            E::InvalidConfig(_) => CliError::Config(e.to_string()),
            E::EmptyDataset | E::EmptyFrame | E::TooFewPoints { .. } | E::LengthMismatch { .. } => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}
