//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward closure, so it is
//! independent of every backward rule it validates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Result, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Base step; the actual step is `step * max(1, |x|)`.
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many entries per tensor (`None` = all).
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst entry per tensor, in input order.
    pub worst: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn failures(&self, tol: f64) -> Vec<&Mismatch> {
        self.worst.iter().filter(|m| m.rel_err > tol).collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `loss` against central differences for
/// each named tensor in `inputs`.
///
/// The closure must rebuild the graph from the current tensor values on
/// every call. Existing gradients on `inputs` are cleared first.
pub fn check<L>(
    mut loss: L,
    inputs: &[(String, Tensor<f64>)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    L: FnMut() -> Result<Tensor<f64>>,
{
    for (_, t) in inputs {
        t.zero_grad();
    }
    loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for (name, t) in inputs {
        let n = t.numel();
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; n]);
        let picks: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: Option<Mismatch> = None;
        for i in picks {
            let orig = t.data()[i];
            let h = opts.step * orig.abs().max(1.0);
            t.update_data(|d| d[i] = orig + h);
            let plus = loss()?.item();
            t.update_data(|d| d[i] = orig - h);
            let minus = loss()?.item();
            t.update_data(|d| d[i] = orig);
            let numeric = (plus - minus) / (2.0 * h);
            let rel_err = relative_error(analytic[i], numeric, opts.floor);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                worst = Some(Mismatch {
                    tensor: name.clone(),
                    index: i,
                    analytic: analytic[i],
                    numeric,
                    rel_err,
                });
            }
        }
        report.worst.extend(worst);
    }
    Ok(report)
}
