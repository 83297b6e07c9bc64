//! Hierarchical patch encoder and top-down gated scale fusion.
//!
//! Stages use global self-attention; 2x2 patch merging halves the grid
//! between stages. Feature maps are stored as `(H*W) x d` row-major rows.

use std::rc::Rc;

use tsg_tensor::{Init, ParamStore, Real, Tensor};

use crate::attention::{AttentionBundle, EncoderBlock, MhaConfig};
use crate::nn::Linear;
use crate::scale_gate::{resolve_gates, GateMode, ScaleGate, ScaleGates, TsgConfig};
use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Input image size `(H, W)`; fixes the positional embedding table.
    pub image_size: (usize, usize),
    pub channels: usize,
    pub patch_size: usize,
    pub stages: Vec<StageConfig>,
    pub positional: bool,
    pub mlp_ratio: usize,
}

impl EncoderConfig {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Image sides must be multiples of this.
    pub fn divisor(&self) -> usize {
        self.patch_size << (self.stages.len().saturating_sub(1))
    }

    /// Patch grid of stage `s` (0-based).
    pub fn grid(&self, s: usize) -> (usize, usize) {
        let (h, w) = self.image_size;
        let f = self.patch_size << s;
        (h / f, w / f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.patch_size == 0 || self.channels == 0 {
            return Err(ModelError::Config(
                "encoder needs at least one stage, a patch size and channels".into(),
            ));
        }
        for (i, st) in self.stages.iter().enumerate() {
            MhaConfig::new(st.heads, st.dim)?;
            if i > 0 && st.dim < self.stages[i - 1].dim {
                return Err(ModelError::Config(format!(
                    "stage dims must be nondecreasing (stage {} has {} < {})",
                    i + 1,
                    st.dim,
                    self.stages[i - 1].dim
                )));
            }
        }
        let (h, w) = self.image_size;
        let d = self.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(ModelError::ImageSize {
                height: h,
                width: w,
                divisor: d,
            });
        }
        Ok(())
    }
}

/// Patch features of one stage.
#[derive(Clone, Debug)]
pub struct FeatureMap<F: Real> {
    pub data: Tensor<F>,
    pub grid: (usize, usize),
    /// 1-based stage index.
    pub stage: usize,
}

impl<F: Real> FeatureMap<F> {
    pub fn new(data: Tensor<F>, grid: (usize, usize), stage: usize) -> Result<Self> {
        if data.rank() != 2 || data.shape()[0] != grid.0 * grid.1 {
            return Err(ModelError::Shape(format!(
                "feature shape {:?} does not match grid {}x{}",
                data.shape(),
                grid.0,
                grid.1
            )));
        }
        Ok(FeatureMap { data, grid, stage })
    }

    pub fn rows(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[1]
    }

    /// Bilinear upsampling of the rows to `target`.
    pub fn upsample(&self, target: (usize, usize)) -> Result<Tensor<F>> {
        if target == self.grid {
            return Ok(self.data.clone());
        }
        Ok(self.data.upsample_bilinear(self.grid, target)?)
    }
}

/// Index map flattening each `p x p` patch of an `H x W x c` image into one
/// row in `(py, px, channel)` order.
pub fn patch_index(image_size: (usize, usize), channels: usize, patch: usize) -> Vec<usize> {
    let (h, w) = image_size;
    let (gh, gw) = (h / patch, w / patch);
    let mut idx = Vec::with_capacity(h * w * channels);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                for px in 0..patch {
                    let (y, x) = (gy * patch + py, gx * patch + px);
                    for c in 0..channels {
                        idx.push((y * w + x) * channels + c);
                    }
                }
            }
        }
    }
    idx
}

/// Index map gathering each 2x2 neighborhood of an `H x W x d` map into one
/// row ordered `(0,0), (0,1), (1,0), (1,1)`.
pub fn merge_index(grid: (usize, usize), dim: usize) -> Vec<usize> {
    let (h, w) = grid;
    let mut idx = Vec::with_capacity(h * w * dim);
    for y in 0..h / 2 {
        for x in 0..w / 2 {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let row = (2 * y + dy) * w + 2 * x + dx;
                idx.extend((0..dim).map(|c| row * dim + c));
            }
        }
    }
    idx
}

#[derive(Clone, Debug)]
pub struct Stage<F: Real> {
    /// Patch merging into this stage (absent for the first stage).
    pub merge: Option<Linear<F>>,
    pub blocks: Vec<EncoderBlock<F>>,
}

/// Stage features and the last block's self-attention maps per stage.
#[derive(Clone, Debug)]
pub struct BackboneOutput<F: Real> {
    pub features: Vec<FeatureMap<F>>,
    pub bundles: Vec<AttentionBundle<F>>,
}

#[derive(Clone, Debug)]
pub struct Backbone<F: Real> {
    pub cfg: EncoderConfig,
    pub patch_embed: Linear<F>,
    pub pos_embed: Option<Tensor<F>>,
    pub stages: Vec<Stage<F>>,
    patch_index: Rc<[usize]>,
    merge_index: Vec<Rc<[usize]>>,
}

impl<F: Real> Backbone<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.patch_size;
        let d0 = cfg.stages[0].dim;
        let patch_embed = Linear::new(
            store,
            &format!("{name}.patch_embed"),
            p * p * cfg.channels,
            d0,
            true,
        )?;
        let (gh, gw) = cfg.grid(0);
        let pos_embed = if cfg.positional {
            Some(store.create(
                &format!("{name}.pos_embed"),
                &[gh * gw, d0],
                Init::Normal(0.02),
            )?)
        } else {
            None
        };
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut merge_index = Vec::new();
        for (s, st) in cfg.stages.iter().enumerate() {
            let merge = if s == 0 {
                None
            } else {
                let prev = cfg.stages[s - 1].dim;
                merge_index.push(Rc::from(merge_index_for(&cfg, s - 1, prev)));
                Some(Linear::new(
                    store,
                    &format!("{name}.stage{}.merge", s + 1),
                    4 * prev,
                    st.dim,
                    true,
                )?)
            };
            let mha = MhaConfig::new(st.heads, st.dim)?;
            let blocks = (0..st.blocks)
                .map(|b| {
                    EncoderBlock::new(
                        store,
                        &format!("{name}.stage{}.block{}", s + 1, b + 1),
                        mha,
                        st.dim * cfg.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { merge, blocks });
        }
        let patch_index = Rc::from(patch_index(cfg.image_size, cfg.channels, p));
        Ok(Backbone {
            cfg,
            patch_embed,
            pos_embed,
            stages,
            patch_index,
            merge_index,
        })
    }

    fn check_image(&self, image: &Tensor<F>) -> Result<()> {
        let (h, w) = self.cfg.image_size;
        let expected = [h, w, self.cfg.channels];
        if image.shape() != expected {
            let d = self.cfg.divisor();
            if image.rank() == 3 && (!image.shape()[0].is_multiple_of(d) || !image.shape()[1].is_multiple_of(d)) {
                return Err(ModelError::ImageSize {
                    height: image.shape()[0],
                    width: image.shape()[1],
                    divisor: d,
                });
            }
            return Err(ModelError::Shape(format!(
                "image shape {:?}, model expects {expected:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Flattens patches and projects them to the first stage width; adds the
    /// positional table when enabled.
    pub fn patch_embed(&self, image: &Tensor<F>) -> Result<FeatureMap<F>> {
        self.check_image(image)?;
        let p = self.cfg.patch_size;
        let grid = self.cfg.grid(0);
        let rows = grid.0 * grid.1;
        let patches = image.gather(
            self.patch_index.clone(),
            &[rows, p * p * self.cfg.channels],
        )?;
        let mut tokens = self.patch_embed.forward(&patches)?;
        if let Some(pos) = &self.pos_embed {
            tokens = tokens.add(pos)?;
        }
        FeatureMap::new(tokens, grid, 1)
    }

    /// Concatenates 2x2 neighborhoods and projects with `merge`.
    pub fn patch_merge(&self, fm: &FeatureMap<F>, stage: usize) -> Result<FeatureMap<F>> {
        let (h, w) = fm.grid;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(ModelError::Shape(format!(
                "cannot merge an odd {h}x{w} grid"
            )));
        }
        let merge = self.stages[stage]
            .merge
            .as_ref()
            .ok_or_else(|| ModelError::Config(format!("stage {} has no merge", stage + 1)))?;
        let rows = (h / 2) * (w / 2);
        let gathered = fm.data.gather(
            self.merge_index[stage - 1].clone(),
            &[rows, 4 * fm.dim()],
        )?;
        FeatureMap::new(merge.forward(&gathered)?, (h / 2, w / 2), stage + 1)
    }

    pub fn forward(&self, image: &Tensor<F>) -> Result<BackboneOutput<F>> {
        let mut features = Vec::with_capacity(self.stages.len());
        let mut bundles = Vec::with_capacity(self.stages.len());
        let mut fm = self.patch_embed(image)?;
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                fm = self.patch_merge(&fm, s)?;
            }
            let mut x = fm.data.clone();
            let mut last = None;
            for block in &stage.blocks {
                let (y, bundle) = block.forward(&x)?;
                x = y;
                last = Some(bundle);
            }
            fm = FeatureMap::new(x, fm.grid, s + 1)?;
            if let Some(mut b) = last {
                b.grid = Some(fm.grid);
                b.source = format!("stage{}", s + 1);
                bundles.push(b);
            } else {
                return Err(ModelError::Config(format!("stage {} has no blocks", s + 1)));
            }
            features.push(fm.clone());
        }
        Ok(BackboneOutput { features, bundles })
    }
}

fn merge_index_for(cfg: &EncoderConfig, prev_stage: usize, dim: usize) -> Vec<usize> {
    merge_index(cfg.grid(prev_stage), dim)
}

/// Upsamples the query (row) axis of every head map to `target`; keys are
/// untouched. Bilinear weights sum to one, so row sums stay one.
pub fn upsample_attention<F: Real>(
    bundle: &AttentionBundle<F>,
    target: (usize, usize),
) -> Result<AttentionBundle<F>> {
    let grid = bundle
        .grid
        .ok_or_else(|| ModelError::Shape(format!("bundle {} has no grid", bundle.source)))?;
    if grid == target {
        return Ok(bundle.clone());
    }
    let maps = bundle
        .maps
        .iter()
        .map(|m| m.upsample_bilinear(grid, target))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AttentionBundle {
        maps,
        softmax_axis: bundle.softmax_axis,
        source: bundle.source.clone(),
        grid: Some(target),
    })
}

/// How encoder stage features are turned into `d_F`-wide maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncoderFusion {
    /// Top-down fusion with learned two-way scale gates.
    #[default]
    Tsge,
    /// Top-down fusion with fixed equal gates (feature-pyramid style).
    Fpn,
    /// Independent linear projection of every stage, no fusion.
    Projection,
}

/// Top-down fusion output.
#[derive(Clone, Debug)]
pub struct FusionOutput<F: Real> {
    /// Refined maps, finest first, all `d_F` wide.
    pub refined: Vec<FeatureMap<F>>,
    /// Gates of each step, indexed by target stage (finest first); empty for
    /// projection-only fusion.
    pub gates: Vec<ScaleGates<F>>,
}

/// Projects every stage to `d_F` and fuses coarse into fine:
/// `F_S' = L_S(F_S)`, `F_s' = g1 * up(F_{s+1}') + g2 * L_s(F_s)`.
#[derive(Clone, Debug)]
pub struct TopDownFusion<F: Real> {
    pub fusion: EncoderFusion,
    pub lateral: Vec<Linear<F>>,
    /// Gate per step, indexed by target stage. Shared mode stores clones of
    /// one head, so every entry aliases the same parameters.
    pub gates: Vec<ScaleGate<F>>,
}

impl<F: Real> TopDownFusion<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &EncoderConfig,
        d_f: usize,
        fusion: EncoderFusion,
        tsg: &TsgConfig,
        shared: bool,
    ) -> Result<Self> {
        let s_count = cfg.num_stages();
        let lateral = (0..s_count)
            .map(|s| {
                Linear::new(
                    store,
                    &format!("{name}.lateral{}", s + 1),
                    cfg.stages[s].dim,
                    d_f,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let sources: Vec<(usize, usize)> = (0..s_count)
            .map(|t| {
                let (h, w) = cfg.grid(t);
                (cfg.stages[t].heads, h * w)
            })
            .collect();
        let mut gates = Vec::new();
        if fusion == EncoderFusion::Tsge && s_count > 1 {
            if shared {
                let g = ScaleGate::new(store, &format!("{name}.gate"), tsg, &sources, 2)?;
                gates = vec![g; s_count - 1];
            } else {
                for s in 0..s_count - 1 {
                    gates.push(ScaleGate::new(
                        store,
                        &format!("{name}.gate{}", s + 1),
                        tsg,
                        &sources[s..],
                        2,
                    )?);
                }
            }
        }
        Ok(TopDownFusion {
            fusion,
            lateral,
            gates,
        })
    }

    /// Two-way gates for the step targeting stage `s` (0-based).
    pub fn step_gates(
        &self,
        s: usize,
        bundles: &[AttentionBundle<F>],
        target: (usize, usize),
    ) -> Result<ScaleGates<F>> {
        let up = bundles[s..]
            .iter()
            .map(|b| upsample_attention(b, target))
            .collect::<Result<Vec<_>>>()?;
        let g = &self.gates[s];
        g.gate(&g.integrate_self_maps(&up)?)
    }

    pub fn forward(
        &self,
        features: &[FeatureMap<F>],
        bundles: &[AttentionBundle<F>],
        mode: &GateMode,
    ) -> Result<FusionOutput<F>> {
        let s_count = self.lateral.len();
        if features.len() != s_count {
            return Err(ModelError::Shape(format!(
                "{} feature maps for {s_count}-stage fusion",
                features.len()
            )));
        }
        let projected = features
            .iter()
            .zip(&self.lateral)
            .map(|(f, l)| FeatureMap::new(l.forward(&f.data)?, f.grid, f.stage))
            .collect::<Result<Vec<_>>>()?;
        if self.fusion == EncoderFusion::Projection {
            return Ok(FusionOutput {
                refined: projected,
                gates: Vec::new(),
            });
        }
        let mut refined = vec![projected[s_count - 1].clone()];
        let mut gates = Vec::with_capacity(s_count.saturating_sub(1));
        for s in (0..s_count - 1).rev() {
            let target = features[s].grid;
            let coarse = refined.last().expect("coarsest map").upsample(target)?;
            let rows = target.0 * target.1;
            let g = match self.fusion {
                EncoderFusion::Fpn => ScaleGates::uniform(rows, 2)?,
                _ => resolve_gates(mode, rows, 2, || self.step_gates(s, bundles, target))?,
            };
            let fused = g.combine(&[coarse, projected[s].data.clone()])?;
            refined.push(FeatureMap::new(fused, target, s + 1)?);
            gates.push(g);
        }
        refined.reverse();
        gates.reverse();
        Ok(FusionOutput { refined, gates })
    }
}
