//! Full segmentation model: backbone, encoder fusion, class-query decoder.

use tsg_tensor::{ParamStore, Real, Tensor};

use crate::decoder::{predict, Decoder, DecoderFusion, DecoderOutput, DecoderSpec, SegLogits};
use crate::encoder::{
    Backbone, BackboneOutput, EncoderConfig, EncoderFusion, FeatureMap, StageConfig,
    TopDownFusion,
};
use crate::nn::Linear;
use crate::scale_gate::{GateMode, ScaleGates, TsgConfig};
use crate::{ModelError, Result};

/// Which encoder scales feed the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScaleSelection {
    #[default]
    All,
    /// Only stage `s` (1-based); the backbone is truncated after it.
    Single(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub d_f: usize,
    pub tsg: TsgConfig,
    pub decoder_heads: usize,
    pub decoder_blocks: usize,
    pub decoder_mlp_ratio: usize,
    pub classes: usize,
    pub encoder_fusion: EncoderFusion,
    pub decoder_fusion: DecoderFusion,
    pub scale_selection: ScaleSelection,
    /// One gate head shared by all encoder steps and one by all decoder
    /// blocks, instead of independent heads.
    pub shared_gates: bool,
}

impl ModelConfig {
    /// 64x64 images, three stages, `d_F = d_A = 64`, three decoder blocks.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                image_size: (64, 64),
                channels: 3,
                patch_size: 4,
                stages: vec![
                    StageConfig { blocks: 1, dim: 32, heads: 2 },
                    StageConfig { blocks: 1, dim: 64, heads: 4 },
                    StageConfig { blocks: 1, dim: 128, heads: 4 },
                ],
                positional: true,
                mlp_ratio: 4,
            },
            d_f: 64,
            tsg: TsgConfig::new(64),
            decoder_heads: 4,
            decoder_blocks: 3,
            decoder_mlp_ratio: 4,
            classes: 5,
            encoder_fusion: EncoderFusion::Tsge,
            decoder_fusion: DecoderFusion::Tsgd,
            scale_selection: ScaleSelection::All,
            shared_gates: false,
        }
    }

    /// Widths of the large configuration: four stages, `d_F = d_A = 512`,
    /// eight decoder heads.
    pub fn paper() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                image_size: (512, 512),
                channels: 3,
                patch_size: 4,
                stages: vec![
                    StageConfig { blocks: 2, dim: 96, heads: 3 },
                    StageConfig { blocks: 2, dim: 192, heads: 6 },
                    StageConfig { blocks: 6, dim: 384, heads: 12 },
                    StageConfig { blocks: 2, dim: 768, heads: 24 },
                ],
                positional: true,
                mlp_ratio: 4,
            },
            d_f: 512,
            tsg: TsgConfig::new(512),
            decoder_heads: 8,
            decoder_blocks: 3,
            decoder_mlp_ratio: 4,
            classes: 60,
            encoder_fusion: EncoderFusion::Tsge,
            decoder_fusion: DecoderFusion::Tsgd,
            scale_selection: ScaleSelection::All,
            shared_gates: false,
        }
    }

    /// Small widths for oracle and gradient tests.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                image_size: (16, 16),
                channels: 3,
                patch_size: 4,
                stages: vec![
                    StageConfig { blocks: 1, dim: 4, heads: 2 },
                    StageConfig { blocks: 1, dim: 8, heads: 2 },
                ],
                positional: true,
                mlp_ratio: 2,
            },
            d_f: 6,
            tsg: TsgConfig::new(5),
            decoder_heads: 2,
            decoder_blocks: 2,
            decoder_mlp_ratio: 2,
            classes: 3,
            encoder_fusion: EncoderFusion::Tsge,
            decoder_fusion: DecoderFusion::Tsgd,
            scale_selection: ScaleSelection::All,
            shared_gates: false,
        }
    }

    /// Number of maps entering the decoder.
    pub fn decoder_scales(&self) -> usize {
        match self.scale_selection {
            ScaleSelection::All => self.encoder.num_stages(),
            ScaleSelection::Single(_) => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.classes < 2 {
            return Err(ModelError::Config("at least two classes are required".into()));
        }
        if self.d_f == 0 || self.tsg.d_a == 0 || self.tsg.hidden == 0 {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        if let ScaleSelection::Single(s) = self.scale_selection {
            if s == 0 || s > self.encoder.num_stages() {
                return Err(ModelError::Config(format!(
                    "single scale {s} outside 1..={}",
                    self.encoder.num_stages()
                )));
            }
            if self.encoder_fusion != EncoderFusion::Projection {
                return Err(ModelError::Config(
                    "single-scale models use projection-only encoder fusion".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Forced gate behavior at each fusion site, for ablations and tests.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateOverrides {
    pub encoder: GateMode,
    pub decoder: GateMode,
}

#[derive(Clone, Debug)]
pub enum Neck<F: Real> {
    Fusion(TopDownFusion<F>),
    Single { stage: usize, proj: Linear<F> },
}

#[derive(Clone, Debug)]
pub struct ModelOutput<F: Real> {
    pub logits: SegLogits<F>,
    pub backbone: BackboneOutput<F>,
    /// Maps entering the decoder, finest first.
    pub refined: Vec<FeatureMap<F>>,
    pub encoder_gates: Vec<ScaleGates<F>>,
    pub decoder: DecoderOutput<F>,
}

#[derive(Debug)]
pub struct TsgModel<F: Real> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub backbone: Backbone<F>,
    pub neck: Neck<F>,
    pub decoder: Decoder<F>,
}

impl<F: Real> TsgModel<F> {
    /// Builds the model with parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let mut enc = cfg.encoder.clone();
        if let ScaleSelection::Single(s) = cfg.scale_selection {
            enc.stages.truncate(s);
        }
        let backbone = Backbone::new(&mut store, "encoder", enc)?;
        let neck = match cfg.scale_selection {
            ScaleSelection::All => Neck::Fusion(TopDownFusion::new(
                &mut store,
                "fusion",
                &cfg.encoder,
                cfg.d_f,
                cfg.encoder_fusion,
                &cfg.tsg,
                cfg.shared_gates,
            )?),
            ScaleSelection::Single(s) => Neck::Single {
                stage: s,
                proj: Linear::new(
                    &mut store,
                    &format!("fusion.lateral{s}"),
                    cfg.encoder.stages[s - 1].dim,
                    cfg.d_f,
                    true,
                )?,
            },
        };
        let decoder = Decoder::new(
            &mut store,
            "decoder",
            &DecoderSpec {
                classes: cfg.classes,
                d_f: cfg.d_f,
                heads: cfg.decoder_heads,
                blocks: cfg.decoder_blocks,
                mlp_ratio: cfg.decoder_mlp_ratio,
                num_scales: cfg.decoder_scales(),
                fusion: cfg.decoder_fusion,
                tsg: &cfg.tsg,
                shared_gates: cfg.shared_gates,
            },
        )?;
        Ok(TsgModel {
            cfg,
            store,
            backbone,
            neck,
            decoder,
        })
    }

    /// Finest patch grid, where predictions live.
    pub fn patch_grid(&self) -> (usize, usize) {
        self.cfg.encoder.grid(0)
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.cfg.encoder.image_size
    }

    /// Whether any learned scale gate exists.
    pub fn has_gates(&self) -> bool {
        let enc = matches!(&self.neck, Neck::Fusion(f) if !f.gates.is_empty());
        enc || !self.decoder.gates.is_empty()
    }

    pub fn has_decoder_gates(&self) -> bool {
        !self.decoder.gates.is_empty()
    }

    /// Zeroes the output layer of every gate MLP, making all gates uniform.
    pub fn zero_gate_outputs(&self) {
        if let Neck::Fusion(f) = &self.neck {
            f.gates.iter().for_each(|g| g.zero_output_layer());
        }
        self.decoder.gates.iter().for_each(|g| g.zero_output_layer());
    }

    /// Copies values of every parameter whose name also exists in `other`.
    /// Returns how many were copied.
    pub fn copy_matching_params(&self, other: &TsgModel<F>) -> Result<usize> {
        let mut copied = 0;
        for p in self.store.params() {
            if let Some(src) = other.store.get(&p.name) {
                p.tensor.set_data(src.to_vec())?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    pub fn forward(&self, image: &Tensor<F>) -> Result<ModelOutput<F>> {
        self.forward_with(image, &GateOverrides::default())
    }

    pub fn forward_with(
        &self,
        image: &Tensor<F>,
        overrides: &GateOverrides,
    ) -> Result<ModelOutput<F>> {
        let backbone = self.backbone.forward(image)?;
        let (refined, encoder_gates) = match &self.neck {
            Neck::Fusion(f) => {
                let out = f.forward(&backbone.features, &backbone.bundles, &overrides.encoder)?;
                (out.refined, out.gates)
            }
            Neck::Single { stage, proj } => {
                let fm = &backbone.features[stage - 1];
                (
                    vec![FeatureMap::new(proj.forward(&fm.data)?, fm.grid, *stage)?],
                    Vec::new(),
                )
            }
        };
        let grid = self.patch_grid();
        let decoder = self.decoder.forward(&refined, grid, &overrides.decoder)?;
        let logits = predict(decoder.last_memory(), &decoder.y, grid)?;
        Ok(ModelOutput {
            logits,
            backbone,
            refined,
            encoder_gates,
            decoder,
        })
    }

    /// Patch-level cross-entropy for one image.
    pub fn loss(
        &self,
        image: &Tensor<F>,
        patch_labels: &[usize],
        ignore_index: usize,
    ) -> Result<(Tensor<F>, ModelOutput<F>)> {
        let out = self.forward(image)?;
        let loss = out.logits.scores.cross_entropy(patch_labels, ignore_index)?;
        Ok((loss, out))
    }
}
