use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A pipeline run failed part-way. The trace recorded up to the failure is kept.
    #[error("execution of case `{case_id}` failed: {source}")]
    Execution {
        case_id: String,
        #[source]
        source: Box<Error>,
        partial: Box<Trace>,
    },

    #[error("unscripted request (digest {digest})")]
    Unscripted { digest: String },

    #[error("backend error: {message}")]
    Backend { message: String, retryable: bool },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("value table is missing coalitions: {}", .0.join(", "))]
    MissingCoalitions(Vec<String>),

    #[error("infeasible budget: total {total} < {steps} steps x b_min {b_min}")]
    InfeasibleBudget {
        total: usize,
        steps: usize,
        b_min: usize,
    },

    #[error("malformed response from role `{role}`: {message}")]
    MalformedResponse { role: String, message: String },

    #[error("{}: line {line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad configuration or input files rather than
    /// a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::File { .. } | Error::InfeasibleBudget { .. }
        )
    }
}
