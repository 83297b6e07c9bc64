//! Multi-head self- and cross-attention that keep their per-head maps.
//!
//! Query, key and value projections are single `d x d` linears whose column
//! blocks act as the independent per-head maps. Logits are scaled by
//! `1/sqrt(head_dim)`.

use tsg_tensor::{ParamStore, Real, Tensor};

use crate::nn::{LayerNorm, Linear, Mlp};
use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhaConfig {
    pub heads: usize,
    pub model_dim: usize,
}

impl MhaConfig {
    pub fn new(heads: usize, model_dim: usize) -> Result<Self> {
        if heads == 0 || model_dim == 0 || !model_dim.is_multiple_of(heads) {
            return Err(ModelError::Config(format!(
                "model dim {model_dim} is not divisible into {heads} heads"
            )));
        }
        Ok(MhaConfig { heads, model_dim })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Which axis of an attention map the softmax normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Over keys: every query row sums to one.
    Keys,
    /// Over queries: every key column sums to one. For cross-attention with
    /// class queries this is the class-dimension softmax used for gating.
    Queries,
}

/// Per-head attention maps from one attention module.
#[derive(Clone, Debug)]
pub struct AttentionBundle<F: Real> {
    /// One `rows x keys` map per head (rows are queries).
    pub maps: Vec<Tensor<F>>,
    pub softmax_axis: SoftmaxAxis,
    pub source: String,
    /// Spatial layout of the rows when the queries are image patches.
    pub grid: Option<(usize, usize)>,
}

impl<F: Real> AttentionBundle<F> {
    pub fn heads(&self) -> usize {
        self.maps.len()
    }

    pub fn rows(&self) -> usize {
        self.maps[0].shape()[0]
    }

    pub fn keys(&self) -> usize {
        self.maps[0].shape()[1]
    }
}

/// Per-head intermediates of one attention evaluation.
#[derive(Clone, Debug)]
pub struct HeadwiseAttention<F: Real> {
    pub logits: Vec<Tensor<F>>,
    pub maps: Vec<Tensor<F>>,
    pub values: Vec<Tensor<F>>,
    /// `maps[i] * values[i]`, before concatenation and output projection.
    pub heads: Vec<Tensor<F>>,
}

#[derive(Clone, Debug)]
pub struct CrossAttentionOutput<F: Real> {
    pub output: Tensor<F>,
    pub maps: AttentionBundle<F>,
    /// Same logits normalized over the query (class) axis; present when
    /// requested.
    pub gated: Option<AttentionBundle<F>>,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention<F: Real> {
    pub cfg: MhaConfig,
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub logit_scale: f64,
    name: String,
}

impl<F: Real> MultiHeadAttention<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, cfg: MhaConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(MultiHeadAttention {
            cfg,
            query: Linear::new(store, &format!("{name}.wq"), d, d, true)?,
            key: Linear::new(store, &format!("{name}.wk"), d, d, true)?,
            value: Linear::new(store, &format!("{name}.wv"), d, d, true)?,
            output: Linear::new(store, &format!("{name}.wo"), d, d, true)?,
            logit_scale: 1.0 / (cfg.head_dim() as f64).sqrt(),
            name: name.to_string(),
        })
    }

    fn check_width(&self, x: &Tensor<F>, role: &str) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.cfg.model_dim {
            return Err(ModelError::Shape(format!(
                "{}: {role} shape {:?} does not have width {}",
                self.name,
                x.shape(),
                self.cfg.model_dim
            )));
        }
        Ok(())
    }

    /// Projects queries from `queries` and keys/values from `memory`, then
    /// evaluates every head. Maps are normalized over keys.
    pub fn attend_heads(
        &self,
        queries: &Tensor<F>,
        memory: &Tensor<F>,
    ) -> Result<HeadwiseAttention<F>> {
        self.check_width(queries, "queries")?;
        self.check_width(memory, "memory")?;
        let q = self.query.forward(queries)?;
        let k = self.key.forward(memory)?;
        let v = self.value.forward(memory)?;
        let dh = self.cfg.head_dim();
        let mut out = HeadwiseAttention {
            logits: Vec::with_capacity(self.cfg.heads),
            maps: Vec::with_capacity(self.cfg.heads),
            values: Vec::with_capacity(self.cfg.heads),
            heads: Vec::with_capacity(self.cfg.heads),
        };
        for h in 0..self.cfg.heads {
            let qh = q.narrow(1, h * dh, dh)?;
            let kh = k.narrow(1, h * dh, dh)?;
            let vh = v.narrow(1, h * dh, dh)?;
            let logits = qh.matmul_nt(&kh)?.scale(self.logit_scale);
            let map = logits.softmax(1)?;
            out.heads.push(map.matmul(&vh)?);
            out.logits.push(logits);
            out.maps.push(map);
            out.values.push(vh);
        }
        Ok(out)
    }

    fn project(&self, heads: &[Tensor<F>]) -> Result<Tensor<F>> {
        self.output.forward(&Tensor::concat(heads, 1)?)
    }

    pub fn self_attention(&self, tokens: &Tensor<F>) -> Result<(Tensor<F>, AttentionBundle<F>)> {
        let hw = self.attend_heads(tokens, tokens)?;
        let out = self.project(&hw.heads)?;
        Ok((
            out,
            AttentionBundle {
                maps: hw.maps,
                softmax_axis: SoftmaxAxis::Keys,
                source: self.name.clone(),
                grid: None,
            },
        ))
    }

    /// Class queries attend to patch memory. With `gate_softmax`, the same
    /// logits are also normalized over the class axis for the scale gate;
    /// that variant does not feed the returned features.
    pub fn cross_attention(
        &self,
        queries: &Tensor<F>,
        memory: &Tensor<F>,
        gate_softmax: bool,
    ) -> Result<CrossAttentionOutput<F>> {
        let hw = self.attend_heads(queries, memory)?;
        let output = self.project(&hw.heads)?;
        let gated = if gate_softmax {
            let maps = hw
                .logits
                .iter()
                .map(|l| l.softmax(0))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Some(AttentionBundle {
                maps,
                softmax_axis: SoftmaxAxis::Queries,
                source: format!("{}.class_softmax", self.name),
                grid: None,
            })
        } else {
            None
        };
        Ok(CrossAttentionOutput {
            output,
            maps: AttentionBundle {
                maps: hw.maps,
                softmax_axis: SoftmaxAxis::Keys,
                source: self.name.clone(),
                grid: None,
            },
            gated,
        })
    }
}

/// Pre-norm encoder block: `x + SA(LN(x))`, then `+ MLP(LN(.))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock<F: Real> {
    pub norm1: LayerNorm<F>,
    pub attn: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

impl<F: Real> EncoderBlock<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: MhaConfig,
        mlp_dim: usize,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, mlp_dim, d)?,
        })
    }

    pub fn forward(&self, tokens: &Tensor<F>) -> Result<(Tensor<F>, AttentionBundle<F>)> {
        let (sa, bundle) = self.attn.self_attention(&self.norm1.forward(tokens)?)?;
        let x = tokens.add(&sa)?;
        let x = x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)?;
        Ok((x, bundle))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlockOutput<F: Real> {
    pub queries: Tensor<F>,
    pub self_maps: AttentionBundle<F>,
    pub cross_maps: AttentionBundle<F>,
    pub gated_maps: AttentionBundle<F>,
}

/// Pre-norm decoder block: self-attention over class queries, then
/// cross-attention to patch memory, then MLP, each residual. The memory is
/// used as given (no normalization).
#[derive(Clone, Debug)]
pub struct DecoderBlock<F: Real> {
    pub norm1: LayerNorm<F>,
    pub self_attn: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub cross_attn: MultiHeadAttention<F>,
    pub norm3: LayerNorm<F>,
    pub mlp: Mlp<F>,
}

impl<F: Real> DecoderBlock<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        cfg: MhaConfig,
        mlp_dim: usize,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(DecoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), cfg)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), cfg)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), d, mlp_dim, d)?,
        })
    }

    pub fn forward(&self, queries: &Tensor<F>, memory: &Tensor<F>) -> Result<DecoderBlockOutput<F>> {
        let (sa, self_maps) = self.self_attn.self_attention(&self.norm1.forward(queries)?)?;
        let x = queries.add(&sa)?;
        let cross = self
            .cross_attn
            .cross_attention(&self.norm2.forward(&x)?, memory, true)?;
        let x = x.add(&cross.output)?;
        let x = x.add(&self.mlp.forward(&self.norm3.forward(&x)?)?)?;
        Ok(DecoderBlockOutput {
            queries: x,
            self_maps,
            cross_maps: cross.maps,
            gated_maps: cross.gated.expect("gate softmax requested"),
        })
    }
}
