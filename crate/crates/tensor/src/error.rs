use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty loss: every position is ignored")]
    EmptyLoss,
    #[error("label {label} at position {position} is outside [0, {classes})")]
    LabelOutOfRange {
        label: usize,
        position: usize,
        classes: usize,
    },
    #[error("upsample_bilinear: cannot downsample {from:?} to {to:?}")]
    Downsample {
        from: (usize, usize),
        to: (usize, usize),
    },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
