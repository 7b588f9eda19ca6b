use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an API contract (non-scalar loss, label out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A function evaluation produced NaN or infinity.
    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: String, index: usize },

    /// Event timestamps went backwards within a sequence.
    #[error(
        "timestamps must be non-decreasing: sequence {sequence}, step {step}: {prev} > {next}"
    )]
    TimeOrder {
        sequence: usize,
        step: usize,
        prev: f64,
        next: f64,
    },

    /// Training hit a non-finite loss or gradient.
    #[error("divergence at epoch {epoch}, batch {batch}: non-finite {what} in `{param}`")]
    Divergence {
        epoch: usize,
        batch: usize,
        what: &'static str,
        param: String,
    },

    /// Two reports were compared over different datasets.
    #[error("dataset hash mismatch: {left} vs {right}")]
    DatasetHashMismatch { left: String, right: String },

    #[error("invalid {what}: {detail}")]
    InvalidConfig { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
