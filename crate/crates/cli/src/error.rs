use std::path::PathBuf;

use divscale_core::backend::BackendError;
use divscale_core::engine::EngineError;
use divscale_core::metrics::MetricsError;
use divscale_core::theory::TheoryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("{context}: {source}")]
    Engine {
        context: String,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("conformance: {0} check(s) failed")]
    Conformance(usize),
}

impl CliError {
    /// 1 for configuration problems, 2 for backend or protocol failures,
    /// 3 for dataset problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Theory(_) | CliError::Io { .. } => 1,
            CliError::Dataset { .. } => 3,
            CliError::Backend(_) | CliError::Conformance(_) => 2,
            CliError::Engine { source, .. } => engine_code(source),
            CliError::Metrics(MetricsError::Engine(e) | MetricsError::Trial { source: e, .. }) => engine_code(e),
            CliError::Metrics(MetricsError::InvalidInput(_)) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Backend { .. } => 2,
        EngineError::Perturbation {
            source: divscale_core::perturbation::PerturbationError::Backend(_),
            ..
        } => 2,
        _ => 1,
    }
}
