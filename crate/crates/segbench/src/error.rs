use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("shape mismatch: prediction has {pred} pixels, ground truth {gt}")]
    Shape { pred: usize, gt: usize },
    #[error("label {label} at pixel {index} is outside 0..{classes}")]
    Label {
        label: usize,
        index: usize,
        classes: usize,
    },
    #[error("unknown baseline {0:?}")]
    UnknownBaseline(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("dataset directory {0} holds no samples")]
    EmptyDataset(PathBuf),
    #[error(transparent)]
    Model(#[from] tsg_core::ModelError),
}

pub type Result<T> = std::result::Result<T, BenchError>;
