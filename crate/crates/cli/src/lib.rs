//! Orchestration behind the `geogate` binary: configuration, optimization
//! runs, the CDD benchmark, full-stack verification and result files.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const INTEGRATION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] geogate::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Csv(_) => exit::CONFIG,
            CliError::Core(geogate::Error::IntegrationAccuracy { .. }) => exit::INTEGRATION,
            CliError::Core(geogate::Error::Io(_)) | CliError::Io { .. } => exit::FAILURE,
            CliError::Core(_) => exit::CONFIG,
        }
    }
}
