//! The training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg_core::TsgModel;
use tsg_segbench::{
    flip_horizontal, generate_dataset, patch_labels, read_dataset, SegSample, IGNORE_INDEX,
};
use tsg_tensor::{Real, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::io_err;
use crate::eval::{check_compatible, evaluate, fmt_opt, EvalReport};
use crate::optim::{poly_lr, AdamW};
use crate::{Result, TrainError};

/// Offset between the training and validation dataset seeds.
const VAL_SEED_OFFSET: u64 = 0x5eed_0001;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "resolved_config.txt";
pub const NORMS_FILE: &str = "param_norms.txt";

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    /// Validation mIoU at this step.
    pub miou: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,lr,loss,mIoU";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6e},{:.6},{}", r.step, r.lr, r.loss, fmt_opt(r.miou));
    }
    s
}

pub struct TrainOutcome<F: Real> {
    pub model: TsgModel<F>,
    pub metrics: Vec<MetricsRow>,
    /// Per-step batch losses.
    pub losses: Vec<f64>,
    /// Evaluation of the final model on the validation set.
    pub final_eval: EvalReport,
}

/// Training and validation samples. With `val_samples = 0` and no
/// `val_data`, the training set doubles as the validation set.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<SegSample>, Vec<SegSample>)> {
    let gen = cfg.gen_config();
    let train = match &cfg.train_data {
        Some(dir) => read_dataset(dir)?,
        None => generate_dataset(cfg.data_seed, cfg.train_samples, &gen)?,
    };
    let val = match &cfg.val_data {
        Some(dir) => read_dataset(dir)?,
        None if cfg.val_samples == 0 => train.clone(),
        None => generate_dataset(
            cfg.data_seed.wrapping_add(VAL_SEED_OFFSET),
            cfg.val_samples,
            &gen,
        )?,
    };
    Ok((train, val))
}

struct Prepared<F: Real> {
    image: Tensor<F>,
    labels: Vec<usize>,
}

fn prepare<F: Real>(s: &SegSample, patch: usize, classes: usize) -> Prepared<F> {
    Prepared {
        image: s.image_tensor(),
        labels: patch_labels(&s.labels, s.size(), patch, classes),
    }
}

/// Trains a fresh model built from `cfg`. With `out` set, writes the
/// resolved config, `metrics.csv` and the final checkpoint there.
pub fn train<F: Real>(cfg: &RunConfig, out: Option<&Path>) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let (train_set, val_set) = load_data(cfg)?;
    train_on(cfg, &train_set, &val_set, out)
}

pub fn train_on<F: Real>(
    cfg: &RunConfig,
    train_set: &[SegSample],
    val_set: &[SegSample],
    out: Option<&Path>,
) -> Result<TrainOutcome<F>> {
    let model = TsgModel::<F>::new(cfg.model_config()?, cfg.seed)?;
    check_compatible(&model, train_set)?;
    check_compatible(&model, val_set)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join(CONFIG_FILE);
        std::fs::write(&p, cfg.to_text()).map_err(io_err(&p))?;
    }
    let patch = model.cfg.encoder.patch_size;
    let classes = model.cfg.classes;
    let plain: Vec<Prepared<F>> = train_set.iter().map(|s| prepare(s, patch, classes)).collect();
    let flipped: Vec<Prepared<F>> = if cfg.flip {
        train_set
            .iter()
            .map(|s| prepare(&flip_horizontal(s), patch, classes))
            .collect()
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0bad_5eed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut metrics = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut window = (0.0, 0usize);
    let batch = cfg.batch_size.min(train_set.len());

    for step in 0..cfg.steps {
        let lr = poly_lr(step, cfg.steps, cfg.lr, cfg.poly_power)?;
        model.store.zero_grad();
        let mut total: Option<Tensor<F>> = None;
        let mut picked = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            picked.push(i);
            let sample = if cfg.flip && rng.random_bool(0.5) {
                &flipped[i]
            } else {
                &plain[i]
            };
            let (loss, _) = model.loss(&sample.image, &sample.labels, IGNORE_INDEX)?;
            total = Some(match total {
                None => loss,
                Some(t) => t.add(&loss)?,
            });
        }
        let loss = total.expect("batch is non-empty").scale(1.0 / batch as f64);
        let value = loss.item().as_f64();
        if !value.is_finite() {
            let dump = write_norms(&model, out)?;
            return Err(TrainError::NonFiniteLoss {
                step,
                samples: picked,
                dump,
            });
        }
        loss.backward()?;
        opt.step(&model.store, lr)?;
        losses.push(value);
        window.0 += value;
        window.1 += 1;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let report = evaluate(&model, val_set)?;
            metrics.push(MetricsRow {
                step: done,
                lr,
                loss: window.0 / window.1 as f64,
                miou: report.miou,
            });
            window = (0.0, 0);
        }
    }
    let final_eval = evaluate(&model, val_set)?;
    if let Some(dir) = out {
        let p = dir.join(METRICS_FILE);
        std::fs::write(&p, metrics_csv(&metrics)).map_err(io_err(&p))?;
        checkpoint::save(&model.store, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome {
        model,
        metrics,
        losses,
        final_eval,
    })
}

/// `name,numel,l2_norm,finite` per parameter.
pub fn param_norms<F: Real>(model: &TsgModel<F>) -> String {
    let mut s = String::from("name,numel,l2_norm,finite\n");
    for p in model.store.params() {
        let d = p.tensor.data();
        let norm = d.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let finite = d.iter().all(|v| v.as_f64().is_finite());
        let _ = writeln!(s, "{},{},{norm:.6e},{finite}", p.name, d.len());
    }
    s
}

fn write_norms<F: Real>(model: &TsgModel<F>, out: Option<&Path>) -> Result<PathBuf> {
    let path = match out {
        Some(dir) => dir.join(NORMS_FILE),
        None => std::env::temp_dir().join(format!("tsg_{}_{NORMS_FILE}", std::process::id())),
    };
    std::fs::write(&path, param_norms(model)).map_err(io_err(&path))?;
    Ok(path)
}
