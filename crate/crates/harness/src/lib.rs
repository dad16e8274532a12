//! Experiment harness for `jdoc-core`: configuration files, initial laws,
//! ensemble statistics, the finite-difference gradient check, and the six
//! reference experiments.

pub mod config;
pub mod experiment;
pub mod gradcheck;
pub mod output;
pub mod sampling;
pub mod stats;

use thiserror::Error;

pub use config::{parse_config, parse_config_str, Experiment, RunConfig};
pub use experiment::{run_experiment, RunSummary};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use sampling::{sample_initial, InitialLaw};
pub use stats::{compute_stats, EnsembleStats};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(jdoc_core::Error),
    #[error("{0}")]
    Core(jdoc_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<jdoc_core::Error> for HarnessError {
    fn from(e: jdoc_core::Error) -> Self {
        match e {
            jdoc_core::Error::NonFinite { .. } => Self::Numerical(e),
            other => Self::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
