use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tolerance breach: {0}")]
    Tolerance(String),

    #[error(transparent)]
    Model(#[from] nvcav_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        use nvcav_core::Error as E;
        match self {
            CliError::Tolerance(_) => 1,
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Model(e) => match e {
                E::Fit(_) | E::NoConvergence { .. } | E::StepSize { .. } | E::Quadrature { .. } | E::Classification { .. } => 1,
                E::Io(_) => 3,
                E::Domain(_) | E::Generator(_) | E::Correlation(_) | E::Format(_) => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
