//! Single-pass evaluation of a model on a labeled dataset.

use std::fmt::Write as _;
use std::path::Path;

use tsg_core::{logits_to_mask, TsgModel};
use tsg_segbench::{patch_labels, BucketCounts, BucketIou, ConfusionMatrix, SegSample, IGNORE_INDEX};
use tsg_tensor::Real;

use crate::error::io_err;
use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub miou: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    pub buckets: BucketIou,
    pub pixel_accuracy: Option<f64>,
    pub patch_accuracy: Option<f64>,
    /// mIoU of patch predictions against majority patch labels.
    pub patch_miou: Option<f64>,
}

impl EvalReport {
    /// `metric,value` rows; undefined values are written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: Option<f64>| {
            let _ = writeln!(s, "{k},{}", fmt_opt(v));
        };
        row("mIoU", self.miou);
        row("pixel_accuracy", self.pixel_accuracy);
        row("patch_accuracy", self.patch_accuracy);
        row("patch_mIoU", self.patch_miou);
        row("small_IoU", self.buckets.small);
        row("medium_IoU", self.buckets.medium);
        row("large_IoU", self.buckets.large);
        for (c, v) in self.per_class.iter().enumerate() {
            row(&format!("IoU_class{c}"), *v);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

/// Checks that `samples` fit the model's class count and input size.
pub fn check_compatible<F: Real>(model: &TsgModel<F>, samples: &[SegSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for s in samples {
        if s.meta.classes != model.cfg.classes {
            return Err(TrainError::ClassMismatch {
                data: s.meta.classes,
                model: model.cfg.classes,
            });
        }
        if s.size() != model.image_size() {
            return Err(TrainError::ImageSizeMismatch {
                data: s.size(),
                model: model.image_size(),
            });
        }
    }
    Ok(())
}

/// Pixel mIoU, per-class IoU, size-bucketed IoU and accuracies over all
/// samples, one forward pass each.
pub fn evaluate<F: Real>(model: &TsgModel<F>, samples: &[SegSample]) -> Result<EvalReport> {
    check_compatible(model, samples)?;
    let classes = model.cfg.classes;
    let patch = model.cfg.encoder.patch_size;
    let mut pixels = ConfusionMatrix::new(classes);
    let mut patches = ConfusionMatrix::new(classes);
    let mut buckets = BucketCounts::default();
    for s in samples {
        let out = model.forward(&s.image_tensor::<F>())?;
        let mask: Vec<usize> = logits_to_mask(&out.logits, s.size())?
            .into_iter()
            .map(usize::from)
            .collect();
        pixels.update(&mask, &s.label_vec(), IGNORE_INDEX)?;
        buckets.update(&mask, &s.meta)?;
        let gt = patch_labels(&s.labels, s.size(), patch, classes);
        patches.update(&out.logits.patch_labels(), &gt, IGNORE_INDEX)?;
    }
    let report = pixels.report();
    Ok(EvalReport {
        samples: samples.len(),
        miou: report.miou,
        per_class: report.per_class,
        buckets: buckets.iou(),
        pixel_accuracy: pixels.accuracy(),
        patch_accuracy: patches.accuracy(),
        patch_miou: patches.report().miou,
    })
}
