//! Backward rules. Each variant keeps its inputs alive plus whatever
//! forward intermediates the gradient needs.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::rc::Rc;

use crate::kernels::{gemm, Layout};
use crate::tensor::Node;
use crate::{Real, Result, Tensor, TensorError};

pub(crate) enum Op<F: Real> {
    Leaf,
    MatMul {
        lhs: Tensor<F>,
        rhs: Tensor<F>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `lhs * rhs^T` with `lhs: m x k`, `rhs: n x k`.
    MatMulNt {
        lhs: Tensor<F>,
        rhs: Tensor<F>,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        input: Tensor<F>,
        rows: usize,
        cols: usize,
    },
    Add {
        lhs: Tensor<F>,
        rhs: Tensor<F>,
    },
    Sub {
        lhs: Tensor<F>,
        rhs: Tensor<F>,
    },
    Mul {
        lhs: Tensor<F>,
        rhs: Tensor<F>,
    },
    Scale {
        input: Tensor<F>,
        factor: F,
    },
    AddBias {
        input: Tensor<F>,
        bias: Tensor<F>,
    },
    MulRows {
        input: Tensor<F>,
        weights: Tensor<F>,
    },
    Softmax {
        input: Tensor<F>,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Gelu {
        input: Tensor<F>,
    },
    LayerNorm {
        input: Tensor<F>,
        gamma: Tensor<F>,
        beta: Tensor<F>,
        normalized: Vec<F>,
        inv_std: Vec<F>,
    },
    Concat {
        parts: Vec<Tensor<F>>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Narrow {
        input: Tensor<F>,
        outer: usize,
        in_chunk: usize,
        offset: usize,
        out_chunk: usize,
    },
    Reshape {
        input: Tensor<F>,
    },
    Gather {
        input: Tensor<F>,
        index: Rc<[usize]>,
    },
    Upsample {
        input: Tensor<F>,
        taps: Rc<[[(usize, F); 4]]>,
        width: usize,
    },
    CrossEntropy {
        logits: Tensor<F>,
        probs: Vec<F>,
        labels: Rc<[usize]>,
        ignore_index: usize,
        classes: usize,
        count: usize,
    },
    Sum {
        input: Tensor<F>,
    },
    Mean {
        input: Tensor<F>,
    },
}

impl<F: Real> Op<F> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<F>> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul { lhs, rhs, .. }
            | MatMulNt { lhs, rhs, .. }
            | Add { lhs, rhs }
            | Sub { lhs, rhs }
            | Mul { lhs, rhs } => vec![lhs, rhs],
            AddBias { input, bias } => vec![input, bias],
            MulRows { input, weights } => vec![input, weights],
            LayerNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Concat { parts, .. } => parts.iter().collect(),
            CrossEntropy { logits, .. } => vec![logits],
            Transpose { input, .. }
            | Scale { input, .. }
            | Softmax { input, .. }
            | Gelu { input }
            | Narrow { input, .. }
            | Reshape { input }
            | Gather { input, .. }
            | Upsample { input, .. }
            | Sum { input }
            | Mean { input } => vec![input],
        }
    }

    pub(crate) fn any_parent_requires_grad(&self) -> bool {
        self.parents().iter().any(|p| p.requires_grad())
    }

    /// Gradients for every input that requires one, given the output
    /// gradient `g`.
    fn backward(&self, out: &Node<F>, g: &[F]) -> Vec<(Tensor<F>, Vec<F>)> {
        let mut grads = Vec::new();
        let mut push = |t: &Tensor<F>, v: Vec<F>| grads.push((t.clone(), v));
        match self {
            Op::Leaf => {}
            Op::MatMul { lhs, rhs, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if lhs.requires_grad() {
                    let mut da = vec![F::zero(); m * k];
                    let b = rhs.data();
                    gemm(m, n, k, g, Layout::rows(n), &b, Layout::transposed(n), &mut da, false);
                    drop(b);
                    push(lhs, da);
                }
                if rhs.requires_grad() {
                    let mut db = vec![F::zero(); k * n];
                    let a = lhs.data();
                    gemm(k, m, n, &a, Layout::transposed(k), g, Layout::rows(n), &mut db, false);
                    drop(a);
                    push(rhs, db);
                }
            }
            Op::MatMulNt { lhs, rhs, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if lhs.requires_grad() {
                    let mut da = vec![F::zero(); m * k];
                    let b = rhs.data();
                    gemm(m, n, k, g, Layout::rows(n), &b, Layout::rows(k), &mut da, false);
                    drop(b);
                    push(lhs, da);
                }
                if rhs.requires_grad() {
                    let mut db = vec![F::zero(); n * k];
                    let a = lhs.data();
                    gemm(n, m, k, g, Layout::transposed(n), &a, Layout::rows(k), &mut db, false);
                    drop(a);
                    push(rhs, db);
                }
            }
            Op::Transpose { input, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let mut dx = vec![F::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] = g[c * rows + r];
                    }
                }
                push(input, dx);
            }
            Op::Add { lhs, rhs } => {
                if lhs.requires_grad() {
                    push(lhs, g.to_vec());
                }
                if rhs.requires_grad() {
                    push(rhs, g.to_vec());
                }
            }
            Op::Sub { lhs, rhs } => {
                if lhs.requires_grad() {
                    push(lhs, g.to_vec());
                }
                if rhs.requires_grad() {
                    push(rhs, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { lhs, rhs } => {
                if lhs.requires_grad() {
                    let b = rhs.data();
                    push(lhs, g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect());
                }
                if rhs.requires_grad() {
                    let a = lhs.data();
                    push(rhs, g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect());
                }
            }
            Op::Scale { input, factor } => {
                push(input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::AddBias { input, bias } => {
                if input.requires_grad() {
                    push(input, g.to_vec());
                }
                if bias.requires_grad() {
                    let width = bias.numel();
                    let mut db = vec![F::zero(); width];
                    for row in g.chunks_exact(width) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    push(bias, db);
                }
            }
            Op::MulRows { input, weights } => {
                let rows = weights.numel();
                let width = g.len() / rows;
                if input.requires_grad() {
                    let w = weights.data();
                    let mut dx = g.to_vec();
                    for (row, &wr) in dx.chunks_exact_mut(width).zip(w.iter()) {
                        row.iter_mut().for_each(|v| *v *= wr);
                    }
                    drop(w);
                    push(input, dx);
                }
                if weights.requires_grad() {
                    let x = input.data();
                    let dw = g
                        .chunks_exact(width)
                        .zip(x.chunks_exact(width))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    drop(x);
                    push(weights, dw);
                }
            }
            Op::Softmax {
                input,
                outer,
                len,
                inner,
            } => {
                let y = out.data.borrow();
                let mut dx = vec![F::zero(); y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let mut dot = F::zero();
                        for j in 0..*len {
                            let ix = base + j * inner;
                            dot += y[ix] * g[ix];
                        }
                        for j in 0..*len {
                            let ix = base + j * inner;
                            dx[ix] = y[ix] * (g[ix] - dot);
                        }
                    }
                }
                drop(y);
                push(input, dx);
            }
            Op::Gelu { input } => {
                let x = input.data();
                let dx = x.iter().zip(g).map(|(&x, &g)| g * gelu_grad(x)).collect();
                drop(x);
                push(input, dx);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let width = gamma.numel();
                if input.requires_grad() {
                    let gm = gamma.data();
                    let d = F::lit(width as f64);
                    let mut dx = vec![F::zero(); g.len()];
                    for (r, ((dxr, gr), xh)) in dx
                        .chunks_exact_mut(width)
                        .zip(g.chunks_exact(width))
                        .zip(normalized.chunks_exact(width))
                        .enumerate()
                    {
                        let mut sum_dxh = F::zero();
                        let mut sum_dxh_xh = F::zero();
                        for j in 0..width {
                            let dxh = gr[j] * gm[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let scale = inv_std[r] / d;
                        for j in 0..width {
                            let dxh = gr[j] * gm[j];
                            dxr[j] = scale * (d * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    drop(gm);
                    push(input, dx);
                }
                if gamma.requires_grad() {
                    let mut dg = vec![F::zero(); width];
                    for (gr, xh) in g.chunks_exact(width).zip(normalized.chunks_exact(width)) {
                        for j in 0..width {
                            dg[j] += gr[j] * xh[j];
                        }
                    }
                    push(gamma, dg);
                }
                if beta.requires_grad() {
                    let mut db = vec![F::zero(); width];
                    for gr in g.chunks_exact(width) {
                        db.iter_mut().zip(gr).for_each(|(d, &v)| *d += v);
                    }
                    push(beta, db);
                }
            }
            Op::Concat {
                parts,
                outer,
                chunks,
            } => {
                let row: usize = chunks.iter().sum();
                let mut start = 0;
                for (part, &chunk) in parts.iter().zip(chunks) {
                    if part.requires_grad() {
                        let mut dp = Vec::with_capacity(outer * chunk);
                        for o in 0..*outer {
                            let base = o * row + start;
                            dp.extend_from_slice(&g[base..base + chunk]);
                        }
                        push(part, dp);
                    }
                    start += chunk;
                }
            }
            Op::Narrow {
                input,
                outer,
                in_chunk,
                offset,
                out_chunk,
            } => {
                let mut dx = vec![F::zero(); outer * in_chunk];
                for o in 0..*outer {
                    let dst = o * in_chunk + offset;
                    dx[dst..dst + out_chunk]
                        .copy_from_slice(&g[o * out_chunk..(o + 1) * out_chunk]);
                }
                push(input, dx);
            }
            Op::Reshape { input } => push(input, g.to_vec()),
            Op::Gather { input, index } => {
                let mut dx = vec![F::zero(); input.numel()];
                for (&src, &v) in index.iter().zip(g) {
                    dx[src] += v;
                }
                push(input, dx);
            }
            Op::Upsample {
                input,
                taps,
                width,
            } => {
                let width = *width;
                let mut dx = vec![F::zero(); input.numel()];
                for (o, row_taps) in taps.iter().enumerate() {
                    let gr = &g[o * width..(o + 1) * width];
                    for &(src, w) in row_taps {
                        if w == F::zero() {
                            continue;
                        }
                        let dst = &mut dx[src * width..(src + 1) * width];
                        dst.iter_mut().zip(gr).for_each(|(d, &v)| *d += w * v);
                    }
                }
                push(input, dx);
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
                ignore_index,
                classes,
                count,
            } => {
                let scale = g[0] / F::lit(*count as f64);
                let mut dx = vec![F::zero(); probs.len()];
                for (r, &label) in labels.iter().enumerate() {
                    if label == *ignore_index {
                        continue;
                    }
                    let base = r * classes;
                    for c in 0..*classes {
                        dx[base + c] = probs[base + c] * scale;
                    }
                    dx[base + label] -= scale;
                }
                push(logits, dx);
            }
            Op::Sum { input } => push(input, vec![g[0]; input.numel()]),
            Op::Mean { input } => {
                let n = F::lit(input.numel() as f64);
                push(input, vec![g[0] / n; input.numel()]);
            }
        }
        grads
    }
}

/// Derivative of the exact (erf) GELU: `Phi(x) + x * phi(x)`.
pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::lit(0.5);
    let cdf = half * (F::one() + (x * F::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = F::lit(0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2)
        * (-half * x * x).exp();
    cdf + x * pdf
}

impl<F: Real> Tensor<F> {
    /// Reverse-mode pass from a single-element loss.
    ///
    /// Fills `grad` of every gradient-tracking tensor reachable from `self`,
    /// intermediates included. Gradients add onto whatever is already stored;
    /// zero them first when starting a fresh step.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.reverse_topo();
        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);
        for t in order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            for (parent, pg) in t.node.op.backward(&t.node, &g) {
                match pending.entry(parent.id()) {
                    Entry::Occupied(mut e) => {
                        e.get_mut().iter_mut().zip(&pg).for_each(|(a, &b)| *a += b)
                    }
                    Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
            t.accumulate_grad(g);
        }
        Ok(())
    }
}
