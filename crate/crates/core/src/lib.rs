//! Transformer scale gates for multi-scale semantic segmentation.
//!
//! A hierarchical patch encoder produces one feature map per scale. Scale
//! gates read attention maps (self-attention in the encoder, class-softmax
//! cross-attention in the decoder) and predict, for every patch, a
//! probability distribution over scales. The encoder uses two-way gates to
//! fuse scales top-down; the decoder uses S-way gates to mix all
//! upsampled scales into the keys and values of each block.
//!
//! All modules are generic over [`Real`](tsg_tensor::Real) so the same code
//! runs in `f64` for gradient checks and `f32` for training.

pub mod attention;
pub mod decoder;
pub mod encoder;
mod error;
pub mod model;
pub mod nn;
pub mod scale_gate;

pub use attention::{AttentionBundle, MhaConfig, MultiHeadAttention, SoftmaxAxis};
pub use decoder::{logits_to_mask, predict, Decoder, DecoderFusion, QuerySet, SegLogits};
pub use encoder::{Backbone, EncoderConfig, EncoderFusion, FeatureMap, StageConfig, TopDownFusion};
pub use error::{ModelError, Result};
pub use model::{GateOverrides, ModelConfig, ModelOutput, ScaleSelection, TsgModel};
pub use scale_gate::{GateMode, HeadMerge, ScaleGate, ScaleGates, TsgConfig};
