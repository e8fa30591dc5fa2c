use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("backward already ran on this tape; call reset() first")]
    BackwardTwice,

    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),

    #[error("gradient for parameter `{param}` contains NaN or Inf (first bad index {index})")]
    NonFiniteGradient { param: String, index: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("absolute continuity violated at support point {index}: p = {p}, q = 0")]
    AbsoluteContinuity { index: usize, p: f64 },

    #[error("zero normalizer: {0}")]
    ZeroNormalizer(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
