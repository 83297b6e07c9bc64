//! Synthetic multi-scale segmentation benchmark.
//!
//! [`generate`] renders seeded images with objects drawn from a size
//! mixture; [`miou`] and [`size_bucketed_iou`] score predictions;
//! [`make_baseline`] derives the ablation model configurations.

mod baseline;
mod error;
mod generate;
mod io;
mod metrics;

pub use baseline::{make_baseline, BaselineKind};
pub use error::{BenchError, Result};
pub use generate::{
    flip_horizontal, generate, generate_dataset, object_id_map, patch_labels, sample_seed,
    GenConfig, ObjectMeta, SampleMeta, SegSample, Shape, SizeBucket, SizeMix,
};
pub use io::{
    read_dataset, read_pgm, read_ppm, read_sample, write_dataset, write_pgm, write_ppm,
    write_sample,
};
pub use metrics::{miou, size_bucketed_iou, BucketCounts, BucketIou, ConfusionMatrix, MiouReport};

/// Label value that metrics and losses skip.
pub const IGNORE_INDEX: usize = 255;
