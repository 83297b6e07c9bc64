//! Scale gate head: integrate per-head attention maps into one `N x d_A`
//! map, then `softmax(MLP(LayerNorm(A)))` over candidate scales.

use tsg_tensor::{ParamStore, Real, Tensor};

use crate::attention::{AttentionBundle, SoftmaxAxis};
use crate::nn::{zero_out, LayerNorm, Linear, Mlp};
use crate::{ModelError, Result};

/// How the heads of one attention bundle are combined before projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HeadMerge {
    /// Concatenate head maps along the feature axis.
    #[default]
    Concat,
    /// Average head maps (one shared projection per source).
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsgConfig {
    /// Width of the integrated attention map.
    pub d_a: usize,
    /// Hidden width of the gate MLP.
    pub hidden: usize,
    pub head_merge: HeadMerge,
    /// Whether the integration linears carry a bias.
    pub integrate_bias: bool,
}

impl TsgConfig {
    pub fn new(d_a: usize) -> Self {
        TsgConfig {
            d_a,
            hidden: d_a,
            head_merge: HeadMerge::Concat,
            integrate_bias: true,
        }
    }
}

/// How gates are obtained at a fusion site.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum GateMode {
    /// Predicted by the gate head.
    #[default]
    Learned,
    /// Every scale weighted `1/k`.
    Uniform,
    /// The same weights for every patch, one per scale.
    Fixed(Vec<f64>),
}

/// Per-patch distributions over scales, `N x S`.
#[derive(Clone, Debug)]
pub struct ScaleGates<F: Real> {
    pub gates: Tensor<F>,
    pub num_scales: usize,
}

impl<F: Real> ScaleGates<F> {
    /// Constant gates (no gradient) with `weights` repeated for `rows` patches.
    pub fn constant(rows: usize, weights: &[f64]) -> Result<Self> {
        let data: Vec<f64> = (0..rows).flat_map(|_| weights.iter().copied()).collect();
        Ok(ScaleGates {
            gates: Tensor::from_f64(&[rows, weights.len()], &data)?,
            num_scales: weights.len(),
        })
    }

    pub fn uniform(rows: usize, scales: usize) -> Result<Self> {
        Self::constant(rows, &vec![1.0 / scales as f64; scales])
    }

    pub fn rows(&self) -> usize {
        self.gates.shape()[0]
    }

    /// Gate column for scale `s` as an `N x 1` tensor.
    pub fn column(&self, s: usize) -> Result<Tensor<F>> {
        Ok(self.gates.narrow(1, s, 1)?)
    }

    /// `sum_s g[:, s] * features[s]`.
    pub fn combine(&self, features: &[Tensor<F>]) -> Result<Tensor<F>> {
        if features.len() != self.num_scales {
            return Err(ModelError::Shape(format!(
                "{} gate columns for {} feature maps",
                self.num_scales,
                features.len()
            )));
        }
        let mut acc: Option<Tensor<F>> = None;
        for (s, f) in features.iter().enumerate() {
            if f.shape()[0] != self.rows() {
                return Err(ModelError::Shape(format!(
                    "feature map {s} has {} rows, gates have {}",
                    f.shape()[0],
                    self.rows()
                )));
            }
            let term = f.mul_rows(&self.column(s)?)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one scale"))
    }
}

/// Resolves `mode` into gates for `rows` patches and `scales` candidates.
/// `learned` is evaluated only in [`GateMode::Learned`].
pub fn resolve_gates<F: Real>(
    mode: &GateMode,
    rows: usize,
    scales: usize,
    learned: impl FnOnce() -> Result<ScaleGates<F>>,
) -> Result<ScaleGates<F>> {
    match mode {
        GateMode::Learned => learned(),
        GateMode::Uniform => ScaleGates::uniform(rows, scales),
        GateMode::Fixed(w) => {
            if w.len() != scales {
                return Err(ModelError::Config(format!(
                    "fixed gates have {} weights, fusion site has {scales} scales",
                    w.len()
                )));
            }
            ScaleGates::constant(rows, w)
        }
    }
}

/// One gate head. Holds an integration linear per attention source; when
/// called with fewer bundles than sources, the trailing sources are used,
/// which lets a single head serve every top-down step.
#[derive(Clone, Debug)]
pub struct ScaleGate<F: Real> {
    pub integrate: Vec<Linear<F>>,
    pub norm: LayerNorm<F>,
    pub mlp: Mlp<F>,
    pub head_merge: HeadMerge,
    pub num_scales: usize,
}

impl<F: Real> ScaleGate<F> {
    /// `sources[i] = (heads, keys)` of the i-th attention source.
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: &TsgConfig,
        sources: &[(usize, usize)],
        num_scales: usize,
    ) -> Result<Self> {
        if sources.is_empty() || num_scales == 0 {
            return Err(ModelError::Config(format!(
                "{name}: a scale gate needs at least one source and one scale"
            )));
        }
        let integrate = sources
            .iter()
            .enumerate()
            .map(|(i, &(heads, keys))| {
                let width = match cfg.head_merge {
                    HeadMerge::Concat => heads * keys,
                    HeadMerge::Average => keys,
                };
                Linear::new(
                    store,
                    &format!("{name}.integrate{i}"),
                    width,
                    cfg.d_a,
                    cfg.integrate_bias,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScaleGate {
            integrate,
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.d_a)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), cfg.d_a, cfg.hidden, num_scales)?,
            head_merge: cfg.head_merge,
            num_scales,
        })
    }

    /// Zeroes the last MLP layer so every patch gets uniform gates.
    pub fn zero_output_layer(&self) {
        zero_out(&self.mlp.fc2.weight);
        if let Some(b) = &self.mlp.fc2.bias {
            zero_out(b);
        }
    }

    fn merge_heads(&self, maps: &[Tensor<F>]) -> Result<Tensor<F>> {
        match self.head_merge {
            HeadMerge::Concat => Ok(Tensor::concat(maps, 1)?),
            HeadMerge::Average => {
                let mut acc = maps[0].clone();
                for m in &maps[1..] {
                    acc = acc.add(m)?;
                }
                Ok(acc.scale(1.0 / maps.len() as f64))
            }
        }
    }

    fn project(&self, merged: &[Tensor<F>]) -> Result<Tensor<F>> {
        if merged.len() > self.integrate.len() {
            return Err(ModelError::Shape(format!(
                "{} attention sources for a gate with {} integration layers",
                merged.len(),
                self.integrate.len()
            )));
        }
        let offset = self.integrate.len() - merged.len();
        let rows = merged[0].shape()[0];
        let mut acc: Option<Tensor<F>> = None;
        for (i, m) in merged.iter().enumerate() {
            if m.shape()[0] != rows {
                return Err(ModelError::Shape(format!(
                    "attention source {i} has {} rows, expected {rows}",
                    m.shape()[0]
                )));
            }
            let p = self.integrate[offset + i].forward(m)?;
            acc = Some(match acc {
                Some(a) => a.add(&p)?,
                None => p,
            });
        }
        Ok(acc.expect("non-empty sources"))
    }

    /// Integrates self-attention bundles already upsampled to a common row
    /// count: per bundle, merge heads and project to `d_A`; sum over bundles.
    pub fn integrate_self_maps(&self, bundles: &[AttentionBundle<F>]) -> Result<Tensor<F>> {
        if bundles.is_empty() {
            return Err(ModelError::Shape("no attention bundles to integrate".into()));
        }
        let merged = bundles
            .iter()
            .map(|b| self.merge_heads(&b.maps))
            .collect::<Result<Vec<_>>>()?;
        self.project(&merged)
    }

    /// Integrates class-softmax cross-attention maps: transpose every head
    /// to `N x C`, merge heads, project to `d_A`.
    pub fn integrate_cross_maps(&self, bundle: &AttentionBundle<F>) -> Result<Tensor<F>> {
        if bundle.softmax_axis != SoftmaxAxis::Queries {
            return Err(ModelError::SoftmaxAxis {
                expected: SoftmaxAxis::Queries,
                found: bundle.softmax_axis,
            });
        }
        let transposed = bundle
            .maps
            .iter()
            .map(|m| m.transpose())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let merged = self.merge_heads(&transposed)?;
        self.project(std::slice::from_ref(&merged))
    }

    /// `softmax(MLP(LayerNorm(a)))` along the scale axis.
    pub fn gate(&self, a: &Tensor<F>) -> Result<ScaleGates<F>> {
        let logits = self.mlp.forward(&self.norm.forward(a)?)?;
        Ok(ScaleGates {
            gates: logits.softmax(1)?,
            num_scales: self.num_scales,
        })
    }
}
