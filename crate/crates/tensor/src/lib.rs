//! Minimal dense-array engine with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted nodes of a dynamically built graph. Every
//! operation records how to propagate gradients to its inputs; calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse creation order.
//!
//! Gradients accumulate: calling `backward` twice without
//! [`Tensor::zero_grad`] (or [`ParamStore::zero_grad`]) in between adds the two
//! contributions. Training loops are expected to zero gradients before each
//! step.
//!
//! Everything is row-major. Spatial maps are stored flattened as `(H*W) x d`
//! matrices; the `(H, W)` grid travels alongside as metadata.

mod autograd;
mod error;
pub mod gradcheck;
mod kernels;
mod ops;
mod param;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use param::{Init, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
