use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("no masked-in positions for {0}")]
    EmptyMask(&'static str),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("backward already ran on this tape; reset it before calling again")]
    BackwardTwice,

    #[error("loss is not connected to any tensor that requires grad")]
    Detached,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("config error: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The sample carries no usable target for the requested task.
    #[error("sample skipped: {0}")]
    Skip(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("missing feature file for video {video_id} ({})", path.display())]
    MissingFeatures { video_id: String, path: PathBuf },

    #[error("{}:{line}: malformed record: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
