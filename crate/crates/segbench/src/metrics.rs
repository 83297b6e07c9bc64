//! Confusion-matrix IoU metrics.

use std::collections::HashMap;

use crate::generate::{object_id_map, SampleMeta, SizeBucket};
use crate::{BenchError, Result};

/// `C x C` pixel counts, rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair; ground-truth pixels equal to
    /// `ignore_index` are skipped.
    pub fn update(&mut self, pred: &[usize], gt: &[usize], ignore_index: usize) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(BenchError::Shape {
                pred: pred.len(),
                gt: gt.len(),
            });
        }
        let c = self.classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == ignore_index {
                continue;
            }
            for label in [g, p] {
                if label >= c {
                    return Err(BenchError::Label {
                        label,
                        index: i,
                        classes: c,
                    });
                }
            }
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class appears in
    /// neither ground truth nor prediction.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..self.classes).map(|p| self.get(k, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|g| self.get(g, k)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn report(&self) -> MiouReport {
        let per_class = self.iou();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        MiouReport { per_class, miou }
    }

    /// Fraction of evaluated pixels on the diagonal.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        let diag: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// `None` marks classes absent from both masks.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined classes; `None` when no class is defined.
    pub miou: Option<f64>,
}

pub fn miou(pred: &[usize], gt: &[usize], classes: usize, ignore_index: usize) -> Result<MiouReport> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.update(pred, gt, ignore_index)?;
    Ok(cm.report())
}

/// Pooled per-object IoU by size bucket; `None` for empty buckets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BucketIou {
    pub small: Option<f64>,
    pub medium: Option<f64>,
    pub large: Option<f64>,
}

impl BucketIou {
    pub fn get(&self, b: SizeBucket) -> Option<f64> {
        match b {
            SizeBucket::Small => self.small,
            SizeBucket::Medium => self.medium,
            SizeBucket::Large => self.large,
        }
    }
}

/// Intersection and union counts per bucket, poolable across images.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BucketCounts {
    pub counts: HashMap<SizeBucket, (u64, u64)>,
}

impl BucketCounts {
    /// For every object: its visible pixels `V` against pixels predicted as
    /// its class inside its bounding box `P`; adds `|V & P|` and `|V | P|`
    /// to the object's bucket.
    pub fn update(&mut self, pred: &[usize], meta: &SampleMeta) -> Result<()> {
        let (h, w) = (meta.height, meta.width);
        if pred.len() != h * w {
            return Err(BenchError::Shape {
                pred: pred.len(),
                gt: h * w,
            });
        }
        let ids = object_id_map(meta);
        for (j, o) in meta.objects.iter().enumerate() {
            let (mut inter, mut union) = (0u64, 0u64);
            for y in o.bbox[1]..o.bbox[3] {
                for x in o.bbox[0]..o.bbox[2] {
                    let p = y * w + x;
                    let visible = ids[p] == Some(j);
                    let predicted = pred[p] == o.class;
                    inter += (visible && predicted) as u64;
                    union += (visible || predicted) as u64;
                }
            }
            let e = self.counts.entry(o.bucket).or_insert((0, 0));
            e.0 += inter;
            e.1 += union;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BucketCounts) {
        for (b, (i, u)) in &other.counts {
            let e = self.counts.entry(*b).or_insert((0, 0));
            e.0 += i;
            e.1 += u;
        }
    }

    pub fn iou(&self) -> BucketIou {
        let f = |b| {
            self.counts
                .get(&b)
                .and_then(|&(i, u)| (u > 0).then(|| i as f64 / u as f64))
        };
        BucketIou {
            small: f(SizeBucket::Small),
            medium: f(SizeBucket::Medium),
            large: f(SizeBucket::Large),
        }
    }
}

/// Size-bucketed IoU of one prediction (see [`BucketCounts::update`]).
pub fn size_bucketed_iou(pred: &[usize], meta: &SampleMeta) -> Result<BucketIou> {
    let mut c = BucketCounts::default();
    c.update(pred, meta)?;
    Ok(c.iou())
}
