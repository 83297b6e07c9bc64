//! Class-query decoder. Every block's keys and values are a fusion of all
//! refined encoder maps upsampled to the finest grid; from the second block
//! on the fusion is gated by the previous block's class-softmax
//! cross-attention.

use tsg_tensor::{Init, ParamStore, Real, Tensor};

use crate::attention::{AttentionBundle, DecoderBlock, MhaConfig};
use crate::encoder::FeatureMap;
use crate::scale_gate::{resolve_gates, GateMode, ScaleGate, ScaleGates, TsgConfig};
use crate::{ModelError, Result};

/// How upsampled scales are mixed into decoder memory for blocks after the
/// first. The first block always uses the plain sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DecoderFusion {
    /// Learned S-way gates from the previous block's cross-attention.
    #[default]
    Tsgd,
    /// Equal gates `1/S` (the mean of the scales).
    Uniform,
    /// Plain sum in every block.
    Sum,
}

/// Learnable class tokens, zero at initialization.
#[derive(Clone, Debug)]
pub struct QuerySet<F: Real> {
    pub tokens: Tensor<F>,
    pub class_ids: Vec<usize>,
}

impl<F: Real> QuerySet<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, classes: usize, dim: usize) -> Result<Self> {
        Ok(QuerySet {
            tokens: store.create(name, &[classes, dim], Init::Zeros)?,
            class_ids: (0..classes).collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.class_ids.len()
    }
}

/// Patch-by-class scores.
#[derive(Clone, Debug)]
pub struct SegLogits<F: Real> {
    /// Pre-softmax scores `F Y^T / sqrt(d_F)`, `N x C`.
    pub scores: Tensor<F>,
    /// Row-wise softmax of `scores`.
    pub probs: Tensor<F>,
    pub grid: (usize, usize),
}

impl<F: Real> SegLogits<F> {
    pub fn classes(&self) -> usize {
        self.scores.shape()[1]
    }

    /// Argmax class per patch, ties to the lowest index.
    pub fn patch_labels(&self) -> Vec<usize> {
        argmax_rows(&self.probs.data(), self.classes())
    }
}

pub(crate) fn argmax_rows<F: Real>(data: &[F], width: usize) -> Vec<usize> {
    data.chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Sum of the upsampled scales (first-block memory).
pub fn tsgd_fuse_first<F: Real>(features_up: &[Tensor<F>]) -> Result<Tensor<F>> {
    let (first, rest) = features_up
        .split_first()
        .ok_or_else(|| ModelError::Shape("no feature maps to fuse".into()))?;
    let mut acc = first.clone();
    for f in rest {
        acc = acc.add(f)?;
    }
    Ok(acc)
}

/// Gated memory from the previous block's class-softmax maps.
pub fn tsgd_fuse<F: Real>(
    features_up: &[Tensor<F>],
    prev_cross: &AttentionBundle<F>,
    gate: &ScaleGate<F>,
) -> Result<(Tensor<F>, ScaleGates<F>)> {
    let g = gate.gate(&gate.integrate_cross_maps(prev_cross)?)?;
    Ok((g.combine(features_up)?, g))
}

/// `softmax(F Y^T / sqrt(d_F))` over classes.
pub fn predict<F: Real>(
    f_dec: &Tensor<F>,
    y: &Tensor<F>,
    grid: (usize, usize),
) -> Result<SegLogits<F>> {
    let d = y.shape()[1] as f64;
    let scores = f_dec.matmul_nt(y)?.scale(1.0 / d.sqrt());
    let probs = scores.softmax(1)?;
    Ok(SegLogits {
        scores,
        probs,
        grid,
    })
}

/// Per-patch argmax upsampled to pixels by nearest neighbor.
pub fn logits_to_mask<F: Real>(p: &SegLogits<F>, image_size: (usize, usize)) -> Result<Vec<u8>> {
    let (gh, gw) = p.grid;
    let (h, w) = image_size;
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(ModelError::Shape(format!(
            "image {h}x{w} is not a multiple of the {gh}x{gw} patch grid"
        )));
    }
    if p.classes() > 256 {
        return Err(ModelError::Config("masks hold at most 256 classes".into()));
    }
    let labels = p.patch_labels();
    let (ph, pw) = (h / gh, w / gw);
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = labels[(y / ph) * gw + x / pw] as u8;
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug)]
pub struct DecoderOutput<F: Real> {
    /// Final class embeddings `C x d_F`.
    pub y: Tensor<F>,
    /// Memory fed to each block.
    pub memories: Vec<Tensor<F>>,
    /// Gates used for blocks 2..L (empty for plain-sum decoding).
    pub gates: Vec<ScaleGates<F>>,
    /// Class-softmax cross maps of every block.
    pub gated_maps: Vec<AttentionBundle<F>>,
    /// Standard cross maps of every block.
    pub cross_maps: Vec<AttentionBundle<F>>,
}

impl<F: Real> DecoderOutput<F> {
    pub fn last_memory(&self) -> &Tensor<F> {
        self.memories.last().expect("at least one block")
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<F: Real> {
    pub fusion: DecoderFusion,
    pub queries: QuerySet<F>,
    pub blocks: Vec<DecoderBlock<F>>,
    /// Gate per block from the second on; clones of one head when shared.
    pub gates: Vec<ScaleGate<F>>,
    pub num_scales: usize,
}

pub struct DecoderSpec<'a> {
    pub classes: usize,
    pub d_f: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub num_scales: usize,
    pub fusion: DecoderFusion,
    pub tsg: &'a TsgConfig,
    pub shared_gates: bool,
}

impl<F: Real> Decoder<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, spec: &DecoderSpec<'_>) -> Result<Self> {
        if spec.blocks == 0 {
            return Err(ModelError::Config("decoder needs at least one block".into()));
        }
        let mha = MhaConfig::new(spec.heads, spec.d_f)?;
        let queries = QuerySet::new(store, &format!("{name}.queries"), spec.classes, spec.d_f)?;
        let blocks = (0..spec.blocks)
            .map(|l| {
                DecoderBlock::new(
                    store,
                    &format!("{name}.block{}", l + 1),
                    mha,
                    spec.d_f * spec.mlp_ratio,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let sources = [(spec.heads, spec.classes)];
        let mut gates = Vec::new();
        if spec.fusion == DecoderFusion::Tsgd && spec.blocks > 1 {
            if spec.shared_gates {
                let g = ScaleGate::new(
                    store,
                    &format!("{name}.gate"),
                    spec.tsg,
                    &sources,
                    spec.num_scales,
                )?;
                gates = vec![g; spec.blocks - 1];
            } else {
                for l in 1..spec.blocks {
                    gates.push(ScaleGate::new(
                        store,
                        &format!("{name}.gate{}", l + 1),
                        spec.tsg,
                        &sources,
                        spec.num_scales,
                    )?);
                }
            }
        }
        Ok(Decoder {
            fusion: spec.fusion,
            queries,
            blocks,
            gates,
            num_scales: spec.num_scales,
        })
    }

    /// Upsamples every refined map to `grid` (the finest patch grid).
    pub fn upsample_all(features: &[FeatureMap<F>], grid: (usize, usize)) -> Result<Vec<Tensor<F>>> {
        features.iter().map(|f| f.upsample(grid)).collect()
    }

    pub fn forward(
        &self,
        features: &[FeatureMap<F>],
        grid: (usize, usize),
        mode: &GateMode,
    ) -> Result<DecoderOutput<F>> {
        if features.len() != self.num_scales {
            return Err(ModelError::Shape(format!(
                "decoder built for {} scales, got {}",
                self.num_scales,
                features.len()
            )));
        }
        let up = Self::upsample_all(features, grid)?;
        let rows = grid.0 * grid.1;
        let mut out = DecoderOutput {
            y: self.queries.tokens.clone(),
            memories: Vec::with_capacity(self.blocks.len()),
            gates: Vec::new(),
            gated_maps: Vec::with_capacity(self.blocks.len()),
            cross_maps: Vec::with_capacity(self.blocks.len()),
        };
        for (l, block) in self.blocks.iter().enumerate() {
            let memory = if l == 0 || self.fusion == DecoderFusion::Sum {
                tsgd_fuse_first(&up)?
            } else {
                let g = match self.fusion {
                    DecoderFusion::Uniform => ScaleGates::uniform(rows, self.num_scales)?,
                    _ => resolve_gates(mode, rows, self.num_scales, || {
                        let gate = &self.gates[l - 1];
                        gate.gate(&gate.integrate_cross_maps(&out.gated_maps[l - 1])?)
                    })?,
                };
                let m = g.combine(&up)?;
                out.gates.push(g);
                m
            };
            let mut res = block.forward(&out.y, &memory)?;
            res.cross_maps.source = format!("decoder.block{}", l + 1);
            res.gated_maps.source = format!("decoder.block{}.class_softmax", l + 1);
            out.y = res.queries;
            out.memories.push(memory);
            out.cross_maps.push(res.cross_maps);
            out.gated_maps.push(res.gated_maps);
        }
        Ok(out)
    }
}
