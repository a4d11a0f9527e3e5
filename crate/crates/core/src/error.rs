use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the descriptor-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row {row} is not unit length (norm {norm})")]
    NonUnitRow { row: usize, norm: f64 },

    #[error("singular system of dimension {dim} even after regularization")]
    SingularSystem { dim: usize },

    #[error("degenerate affine fit for anchor {anchor}: 1ᵀS⁻¹1 vanished")]
    DegenerateFit { anchor: usize },

    #[error("degenerate descriptor at row {row}: zero vector before normalization")]
    DegenerateDescriptor { row: usize },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration} (last good iteration: {last_good:?})")]
    Divergence {
        iteration: u64,
        last_good: Option<u64>,
    },

    #[error("{}: I/O error", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
