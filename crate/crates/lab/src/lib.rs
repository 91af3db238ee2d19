//! Experiment drivers for the Euler-Korteweg numerical laboratory: config
//! parsing, convergence studies and CSV output.

use std::path::PathBuf;

pub mod config;
pub mod experiments;
pub mod output;
pub mod parallel;

pub use config::{ExperimentConfig, Study};
pub use experiments::{run_study, Check, StudyReport};
pub use output::OutputDir;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("output directory {0} is not empty; pass --force to write into it")]
    OutputExists(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] korteweg_core::Error),

    #[error("{context}: {error}")]
    Run {
        context: String,
        #[source]
        error: korteweg_core::Error,
    },
}

/// Process exit codes.
pub mod exit {
    /// Every check of the experiment passed.
    pub const SUCCESS: i32 = 0;
    /// The experiment ran but at least one check failed; outputs are written.
    pub const CHECK_FAILED: i32 = 1;
    /// Bad command line, configuration or output directory.
    pub const CONFIG: i32 = 2;
    /// A run aborted (solver failure, I/O); partial outputs may exist.
    pub const RUNTIME: i32 = 3;
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::OutputExists(_) => exit::CONFIG,
            _ => exit::RUNTIME,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
