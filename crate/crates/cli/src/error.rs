use std::path::PathBuf;

/// Failures surfaced by the command layer, each mapped to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] regicp::Error),

    /// A configuration value or combination is not acceptable.
    #[error("invalid configuration: {0}")]
    Invalid(String),

    /// The configuration file is not valid TOML for [`crate::RunConfig`].
    #[error("{path}: {msg}")]
    ConfigSyntax { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An input file is readable but malformed.
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 validation, 2 I/O (including malformed files), 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use regicp::Error as E;
        match self {
            CliError::Invalid(_) | CliError::ConfigSyntax { .. } => 1,
            CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::Shape(_) | E::Usage(_) => 1,
                E::Io { .. } | E::Format { .. } => 2,
                E::Numeric(_) => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
