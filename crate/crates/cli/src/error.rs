use std::path::PathBuf;

use agescope_core::{CorpusError, GatewayError, ItemFailure, MetricsError};

/// Process exit codes.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_EVALUATION: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("{} item(s) failed; first: {}", .0.len(), .0[0])]
    ItemFailures(Vec<ItemFailure>),
    #[error(transparent)]
    Evaluation(#[from] MetricsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Corpus(_) | CliError::Input(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Backend(GatewayError::Config(_)) => EXIT_INPUT,
            CliError::Backend(_) | CliError::ItemFailures(_) => EXIT_BACKEND,
            CliError::Evaluation(_) => EXIT_EVALUATION,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
