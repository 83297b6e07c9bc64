//! Training, evaluation, checkpoints, gate export and ablation grids for
//! the scale-gated segmentation model.

pub mod ablate;
pub mod checkpoint;
pub mod config;
mod error;
pub mod eval;
pub mod gates;
pub mod optim;
pub mod train;

pub use ablate::{ablate, AblationRow, Suite};
pub use config::{Precision, Preset, RunConfig};
pub use error::{Result, TrainError};
pub use eval::{evaluate, EvalReport};
pub use gates::dump_gates;
pub use optim::{poly_lr, AdamW};
pub use train::{train, train_on, MetricsRow, TrainOutcome};
