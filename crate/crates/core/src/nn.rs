//! Parameterized building blocks.

use tsg_tensor::{Init, ParamStore, Real, Tensor};

use crate::Result;

pub const LN_EPS: f64 = 1e-5;

/// Affine map `x * W + b` with `W: d_in x d_out`.
#[derive(Clone, Debug)]
pub struct Linear<F: Real> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Real> Linear<F> {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.create(
            &format!("{name}.weight"),
            &[d_in, d_out],
            Init::Xavier {
                fan_in: d_in,
                fan_out: d_out,
            },
        )?;
        let bias = if bias {
            Some(store.create(&format!("{name}.bias"), &[d_out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.linear(&self.weight, self.bias.as_ref())?)
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<F: Real> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub eps: f64,
}

impl<F: Real> LayerNorm<F> {
    pub fn new(store: &mut ParamStore<F>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.create(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: store.create(&format!("{name}.beta"), &[dim], Init::Zeros)?,
            eps: LN_EPS,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.layernorm(&self.gamma, &self.beta, self.eps)?)
    }
}

/// Two-layer perceptron `fc2(gelu(fc1(x)))`.
#[derive(Clone, Debug)]
pub struct Mlp<F: Real> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

impl<F: Real> Mlp<F> {
    pub fn new(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, true)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

/// Overwrites a tensor with zeros.
pub fn zero_out<F: Real>(t: &Tensor<F>) {
    t.update_data(|d| d.iter_mut().for_each(|v| *v = F::zero()));
}
