use thiserror::Error;

/// Failures of a command, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] maxmod_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 configuration, 3 data, 4 infeasible constraints,
    /// 5 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use maxmod_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Parameter(_)) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Core(E::Infeasible(_)) => 4,
            CliError::Core(E::Numerical(_) | E::Separation { .. }) => 5,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
