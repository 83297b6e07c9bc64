use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    ConfigValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("poly schedule needs a positive total step count")]
    ZeroTotalSteps,
    #[error("non-finite loss at step {step} (batch samples {samples:?}); parameter norms written to {dump}")]
    NonFiniteLoss {
        step: usize,
        samples: Vec<usize>,
        dump: PathBuf,
    },
    #[error("checkpoint {path}: bad magic (not a TSGCKPT1 file)")]
    BadMagic { path: PathBuf },
    #[error("checkpoint {path}: truncated")]
    Truncated { path: PathBuf },
    #[error("checkpoint {path}: unknown parameter {name}")]
    UnknownParameter { path: PathBuf, name: String },
    #[error("checkpoint {path}: parameter {name} has shape {found:?}, model expects {expected:?}")]
    ParameterShape {
        path: PathBuf,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint {path}: missing parameters {names:?}")]
    MissingParameters { path: PathBuf, names: Vec<String> },
    #[error("dataset has {data} classes, model has {model}")]
    ClassMismatch { data: usize, model: usize },
    #[error("dataset image {data:?} does not match model input {model:?}")]
    ImageSizeMismatch {
        data: (usize, usize),
        model: (usize, usize),
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model has no decoder scale gates")]
    NoDecoderGates,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] tsg_core::ModelError),
    #[error(transparent)]
    Tensor(#[from] tsg_tensor::TensorError),
    #[error(transparent)]
    Bench(#[from] tsg_segbench::BenchError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}
