use std::path::PathBuf;

use crate::tensor::DType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: dtype mismatch ({lhs:?} vs {rhs:?})")]
    DTypeMismatch { op: &'static str, lhs: DType, rhs: DType },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed tensor file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("{what}: expected dimensions {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Attach the id of the frame being processed.
    pub fn in_frame(self, frame: impl Into<String>) -> Self {
        Error::Frame {
            frame: frame.into(),
            source: Box::new(self),
        }
    }
}
