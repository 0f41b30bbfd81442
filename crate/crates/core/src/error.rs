use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("operation `{0}` is not differentiable; wrap its input in stop_gradient")]
    NonDifferentiable(&'static str),

    #[error("missing weights: {}", .0.join(", "))]
    MissingWeights(Vec<String>),

    #[error("weight shape mismatch: {}", .0.join("; "))]
    WeightMismatch(Vec<String>),

    #[error("{path}: byte offset {offset}: {msg}")]
    Format { path: String, offset: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable category tag, used by the CLI for machine-parsable errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid-argument",
            Error::NonDifferentiable(_) => "non-differentiable",
            Error::MissingWeights(_) | Error::WeightMismatch(_) => "weights",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
        }
    }
}
