//! Ablation grids: every model of a suite trained for several seeds on one
//! shared dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use tsg_segbench::{BaselineKind, BucketIou};

use crate::config::{Precision, RunConfig};
use crate::error::io_err;
use crate::eval::fmt_opt;
use crate::train::{load_data, train_on};
use crate::{Result, TrainError};

pub const ABLATION_CSV: &str = "ablation.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const ABLATION_HEADER: &str = "model,seed,mIoU,small_IoU,medium_IoU,large_IoU";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Which fusion sites carry gates.
    Components,
    /// Single-scale models against multi-scale fusion.
    Scales,
    /// Gate head variants.
    TsgVariants,
}

impl FromStr for Suite {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(Suite::Components),
            "scales" => Ok(Suite::Scales),
            "tsg-variants" => Ok(Suite::TsgVariants),
            _ => Err(TrainError::ConfigValue {
                key: "suite".into(),
                value: s.into(),
                message: "expected components, scales or tsg-variants".into(),
            }),
        }
    }
}

impl Suite {
    pub fn models(self, num_stages: usize) -> Vec<BaselineKind> {
        use BaselineKind::*;
        match self {
            Suite::Components => vec![PlainSum, FpnSum, TsgeUniform, ProjTsgd, FpnTsgd, Tsg],
            Suite::Scales => {
                let mut m: Vec<_> = (1..=num_stages).map(SingleScale).collect();
                m.extend([PlainSum, Tsg]);
                m
            }
            Suite::TsgVariants => vec![Tsg, TsgAverage, TsgShared],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub model: BaselineKind,
    pub seed: u64,
    pub miou: Option<f64>,
    pub buckets: BucketIou,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model,
            r.seed,
            fmt_opt(r.miou),
            fmt_opt(r.buckets.small),
            fmt_opt(r.buckets.medium),
            fmt_opt(r.buckets.large)
        );
    }
    s
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean mIoU per model, in first-seen order.
pub fn mean_miou(rows: &[AblationRow]) -> Vec<(BaselineKind, Option<f64>)> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for r in rows {
        let key = r.model.to_string();
        if !groups.contains_key(&key) {
            order.push(r.model);
        }
        groups.entry(key).or_default().push(r.miou);
    }
    order
        .into_iter()
        .map(|m| (m, mean(groups[&m.to_string()].iter().copied())))
        .collect()
}

/// Mean mIoU of `tsg` minus that of `plain_sum`, when both ran.
pub fn tsg_minus_plain(rows: &[AblationRow]) -> Option<f64> {
    let means = mean_miou(rows);
    let get = |k| means.iter().find(|(m, _)| *m == k).and_then(|(_, v)| *v);
    Some(get(BaselineKind::Tsg)? - get(BaselineKind::PlainSum)?)
}

pub fn summary(rows: &[AblationRow]) -> String {
    let mut s = String::from("model,mean_mIoU\n");
    for (m, v) in mean_miou(rows) {
        let _ = writeln!(s, "{m},{}", fmt_opt(v));
    }
    if let Some(d) = tsg_minus_plain(rows) {
        let _ = writeln!(s, "tsg_minus_plain_sum,{d:+.6}");
    }
    s
}

/// Runs `suite` over `seeds` with `base` as the shared config, writing
/// `ablation.csv`, `summary.txt` and one run directory per (model, seed).
pub fn ablate(
    suite: Suite,
    base: &RunConfig,
    seeds: &[u64],
    out: &Path,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    base.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let (train_set, val_set) = load_data(base)?;
    let mut rows = Vec::new();
    for model in suite.models(base.stage_dims.len()) {
        for &seed in seeds {
            let cfg = RunConfig {
                model,
                seed,
                ..base.clone()
            };
            cfg.validate()?;
            let dir = out.join(format!("{model}_seed{seed}"));
            let report = match cfg.precision {
                Precision::F32 => train_on::<f32>(&cfg, &train_set, &val_set, Some(&dir))?.final_eval,
                Precision::F64 => train_on::<f64>(&cfg, &train_set, &val_set, Some(&dir))?.final_eval,
            };
            let row = AblationRow {
                model,
                seed,
                miou: report.miou,
                buckets: report.buckets,
            };
            progress(&row);
            rows.push(row);
            let p = out.join(ABLATION_CSV);
            std::fs::write(&p, ablation_csv(&rows)).map_err(io_err(&p))?;
        }
    }
    let p = out.join(SUMMARY_FILE);
    std::fs::write(&p, summary(&rows)).map_err(io_err(&p))?;
    Ok(rows)
}
