use std::path::PathBuf;

use thiserror::Error;

use crate::depgraph::CycleReport;

pub type Result<T> = std::result::Result<T, SarError>;

#[derive(Debug, Error)]
pub enum SarError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty graph: at least one interior frame is required")]
    EmptyGraph,

    #[error("dependency graph has a cycle through positions {0}")]
    Cycle(CycleReport),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
}

impl SarError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SarError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SarError::Io {
            path: path.into(),
            source,
        }
    }
}
