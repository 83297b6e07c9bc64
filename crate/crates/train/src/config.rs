//! Flat `key = value` run configuration with presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tsg_core::{ModelConfig, StageConfig, TsgConfig};
use tsg_segbench::{make_baseline, BaselineKind, GenConfig};

use crate::error::io_err;
use crate::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 64x64 synthetic data, three stages, 200/50 samples.
    Desk,
    /// Large widths (documentation only; far too slow for a CPU).
    Paper,
    /// Desk model on four training images, evaluated on those images.
    Overfit,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            "overfit" => Ok(Preset::Overfit),
            _ => Err("expected desk, paper or overfit".into()),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
            Preset::Overfit => "overfit",
        }
    }
}

/// Every knob of a run. [`RunConfig::to_text`] writes the resolved form.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: BaselineKind,
    pub image_size: usize,
    pub patch_size: usize,
    pub stage_blocks: Vec<usize>,
    pub stage_dims: Vec<usize>,
    pub stage_heads: Vec<usize>,
    pub positional: bool,
    pub mlp_ratio: usize,
    pub d_f: usize,
    pub d_a: usize,
    pub gate_hidden: usize,
    pub integrate_bias: bool,
    pub decoder_heads: usize,
    pub decoder_blocks: usize,
    pub classes: usize,
    pub train_samples: usize,
    /// 0 evaluates on the training set.
    pub val_samples: usize,
    pub data_seed: u64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub noise: f64,
    pub color_jitter: f64,
    /// Random horizontal flips of training samples.
    pub flip: bool,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub eval_every: usize,
    pub precision: Precision,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let desk = RunConfig {
            preset: Preset::Desk,
            seed: 0,
            model: BaselineKind::Tsg,
            image_size: 64,
            patch_size: 4,
            stage_blocks: vec![1, 1, 1],
            stage_dims: vec![32, 64, 128],
            stage_heads: vec![2, 4, 4],
            positional: true,
            mlp_ratio: 4,
            d_f: 64,
            d_a: 64,
            gate_hidden: 64,
            integrate_bias: true,
            decoder_heads: 4,
            decoder_blocks: 3,
            classes: 5,
            train_samples: 200,
            val_samples: 50,
            data_seed: 1,
            objects_min: 2,
            objects_max: 5,
            noise: 0.08,
            color_jitter: 0.1,
            flip: false,
            train_data: None,
            val_data: None,
            steps: 1500,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 1e-2,
            poly_power: 0.9,
            eval_every: 250,
            precision: Precision::F32,
        };
        match p {
            Preset::Desk => desk,
            Preset::Overfit => RunConfig {
                preset: Preset::Overfit,
                train_samples: 4,
                val_samples: 0,
                steps: 500,
                eval_every: 100,
                ..desk
            },
            Preset::Paper => RunConfig {
                preset: Preset::Paper,
                image_size: 512,
                stage_blocks: vec![2, 2, 6, 2],
                stage_dims: vec![96, 192, 384, 768],
                stage_heads: vec![3, 6, 12, 24],
                d_f: 512,
                d_a: 512,
                gate_hidden: 512,
                decoder_heads: 8,
                classes: 60,
                lr: 6e-5,
                steps: 80_000,
                batch_size: 16,
                eval_every: 8_000,
                ..desk
            },
        }
    }

    /// Generator settings for the synthetic data of this run.
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            height: self.image_size,
            width: self.image_size,
            classes: self.classes,
            objects: (self.objects_min, self.objects_max),
            color_jitter: self.color_jitter,
            noise: self.noise,
            ..GenConfig::default()
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let n = self.stage_dims.len();
        if self.stage_blocks.len() != n || self.stage_heads.len() != n {
            return Err(value_err(
                "stage_dims",
                &join(&self.stage_dims),
                "stage_blocks, stage_dims and stage_heads must have equal length",
            ));
        }
        let mut base = ModelConfig::desk();
        base.encoder.image_size = (self.image_size, self.image_size);
        base.encoder.patch_size = self.patch_size;
        base.encoder.positional = self.positional;
        base.encoder.mlp_ratio = self.mlp_ratio;
        base.encoder.stages = (0..n)
            .map(|i| StageConfig {
                blocks: self.stage_blocks[i],
                dim: self.stage_dims[i],
                heads: self.stage_heads[i],
            })
            .collect();
        base.d_f = self.d_f;
        base.tsg = TsgConfig {
            hidden: self.gate_hidden,
            integrate_bias: self.integrate_bias,
            ..TsgConfig::new(self.d_a)
        };
        base.decoder_heads = self.decoder_heads;
        base.decoder_blocks = self.decoder_blocks;
        base.decoder_mlp_ratio = self.mlp_ratio;
        base.classes = self.classes;
        Ok(make_baseline(self.model, &base)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.gen_config().validate()?;
        for (key, v) in [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("train_samples", self.train_samples),
        ] {
            if v == 0 {
                return Err(value_err(key, "0", "must be positive"));
            }
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(value_err("lr", &self.lr.to_string(), "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "preset" => {
                let seed = self.seed;
                *self = RunConfig::preset(parse(key, v)?);
                self.seed = seed;
            }
            "seed" => self.seed = parse(key, v)?,
            "model" => self.model = v.parse().map_err(|e: tsg_segbench::BenchError| value_err(key, v, &e.to_string()))?,
            "image_size" => self.image_size = parse(key, v)?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "stage_blocks" => self.stage_blocks = parse_list(key, v)?,
            "stage_dims" => self.stage_dims = parse_list(key, v)?,
            "stage_heads" => self.stage_heads = parse_list(key, v)?,
            "positional" => self.positional = parse(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, v)?,
            "d_f" => self.d_f = parse(key, v)?,
            "d_a" => self.d_a = parse(key, v)?,
            "gate_hidden" => self.gate_hidden = parse(key, v)?,
            "integrate_bias" => self.integrate_bias = parse(key, v)?,
            "decoder_heads" => self.decoder_heads = parse(key, v)?,
            "decoder_blocks" => self.decoder_blocks = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "train_samples" => self.train_samples = parse(key, v)?,
            "val_samples" => self.val_samples = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "objects_min" => self.objects_min = parse(key, v)?,
            "objects_max" => self.objects_max = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "color_jitter" => self.color_jitter = parse(key, v)?,
            "flip" => self.flip = parse(key, v)?,
            "train_data" => self.train_data = parse_path(v),
            "val_data" => self.val_data = parse_path(v),
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "poly_power" => self.poly_power = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(value_err(key, v, "expected f32 or f64")),
                }
            }
            _ => return Err(TrainError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses a config document on top of `self`. A `preset` line resets
    /// everything to that preset, so it should come first.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::ConfigParse {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(TrainError::ConfigParse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }

    /// Resolved config, one `key = value` per line, `preset` first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("preset", self.preset.name().to_string()),
            ("seed", self.seed.to_string()),
            ("model", self.model.to_string()),
            ("image_size", self.image_size.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("stage_blocks", join(&self.stage_blocks)),
            ("stage_dims", join(&self.stage_dims)),
            ("stage_heads", join(&self.stage_heads)),
            ("positional", self.positional.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("d_f", self.d_f.to_string()),
            ("d_a", self.d_a.to_string()),
            ("gate_hidden", self.gate_hidden.to_string()),
            ("integrate_bias", self.integrate_bias.to_string()),
            ("decoder_heads", self.decoder_heads.to_string()),
            ("decoder_blocks", self.decoder_blocks.to_string()),
            ("classes", self.classes.to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("val_samples", self.val_samples.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("objects_min", self.objects_min.to_string()),
            ("objects_max", self.objects_max.to_string()),
            ("noise", self.noise.to_string()),
            ("color_jitter", self.color_jitter.to_string()),
            ("flip", self.flip.to_string()),
            ("train_data", path(&self.train_data)),
            ("val_data", path(&self.val_data)),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("poly_power", self.poly_power.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("precision", precision.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn value_err(key: &str, value: &str, message: &str) -> TrainError {
    TrainError::ConfigValue {
        key: key.to_string(),
        value: value.to_string(),
        message: message.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| value_err(key, v, &e.to_string()))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
