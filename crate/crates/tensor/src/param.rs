use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Real, Result, Tensor, TensorError};

/// Initialization scheme for a new parameter. Values are drawn in `f64` and
/// rounded, so `f32` and `f64` models built from the same seed agree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Uniform(f64),
    Normal(f64),
    /// Glorot uniform, bound `sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
}

/// A named trainable tensor. The name is its checkpoint identity.
#[derive(Clone, Debug)]
pub struct Parameter<F: Real> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// Registry of every parameter of a model, in creation order.
pub struct ParamStore<F: Real> {
    params: Vec<Parameter<F>>,
    by_name: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl<F: Real> std::fmt::Debug for ParamStore<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.params.len())
            .field("numel", &self.numel())
            .finish()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn create(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<F>> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(bound) => self.uniform(n, bound),
            Init::Xavier { fan_in, fan_out } => {
                self.uniform(n, (6.0 / (fan_in + fan_out) as f64).sqrt())
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| TensorError::Invalid(format!("normal init: {e}")))?;
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        };
        let tensor = Tensor::parameter(shape, values.into_iter().map(F::lit).collect())?;
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor: tensor.clone(),
        });
        Ok(tensor)
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        if bound == 0.0 {
            return vec![0.0; n];
        }
        (0..n)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.by_name.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.tensor.zero_grad());
    }

    /// Rng stream for callers that need extra randomness tied to the
    /// model seed (e.g. test perturbations).
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
