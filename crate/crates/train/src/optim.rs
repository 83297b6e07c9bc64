//! AdamW with decoupled weight decay, and the poly learning-rate schedule.

use tsg_tensor::{ParamStore, Real};

use crate::{Result, TrainError};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<F: Real>(store: &ParamStore<F>, weight_decay: f64) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update at learning rate `lr`:
    /// `p -= lr * wd * p`, then `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Every parameter must hold a gradient.
    pub fn step<F: Real>(&mut self, store: &ParamStore<F>, lr: f64) -> Result<()> {
        let grads = store
            .params()
            .iter()
            .map(|p| p.tensor.grad().ok_or_else(|| TrainError::MissingGradient(p.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in store.params().iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            p.tensor.update_data(|data| {
                for (k, x) in data.iter_mut().enumerate() {
                    let gk = g[k].as_f64();
                    m[k] = b1 * m[k] + (1.0 - b1) * gk;
                    v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    let mut val = x.as_f64();
                    val -= lr * wd * val;
                    val -= lr * m_hat / (v_hat.sqrt() + eps);
                    *x = F::lit(val);
                }
            });
        }
        Ok(())
    }
}

/// `lr0 * (1 - step/total)^power`.
pub fn poly_lr(step: usize, total: usize, lr0: f64, power: f64) -> Result<f64> {
    if total == 0 {
        return Err(TrainError::ZeroTotalSteps);
    }
    let frac = 1.0 - step.min(total) as f64 / total as f64;
    Ok(lr0 * frac.powf(power))
}
