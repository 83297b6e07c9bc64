use thiserror::Error;
use tsg_tensor::TensorError;

use crate::attention::SoftmaxAxis;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {height}x{width} is not divisible by {divisor}")]
    ImageSize {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("attention maps normalized over {found:?}, expected {expected:?}")]
    SoftmaxAxis {
        expected: SoftmaxAxis,
        found: SoftmaxAxis,
    },
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
