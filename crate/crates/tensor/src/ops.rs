use std::rc::Rc;

use crate::autograd::Op;
use crate::kernels::{bilinear_axis, gemm, Layout};
use crate::{Real, Result, Tensor, TensorError};

fn mismatch<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<F: Real> Tensor<F> {
    /// Matrix product of `m x k` and `k x n` operands.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self, rhs));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, &self.data(), Layout::rows(k), &rhs.data(), Layout::rows(n), &mut out, false);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::MatMul {
                lhs: self.clone(),
                rhs: rhs.clone(),
                m,
                k,
                n,
            },
        ))
    }

    /// `self * rhs^T` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = rhs.dims2("matmul_nt")?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self, rhs));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, &self.data(), Layout::rows(k), &rhs.data(), Layout::transposed(k), &mut out, false);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::MatMulNt {
                lhs: self.clone(),
                rhs: rhs.clone(),
                m,
                k,
                n,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<F>> {
        let (rows, cols) = self.dims2("transpose")?;
        let x = self.data();
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![cols, rows],
            out,
            Op::Transpose {
                input: self.clone(),
                rows,
                cols,
            },
        ))
    }

    fn zip_same(
        &self,
        rhs: &Tensor<F>,
        op: &'static str,
        f: impl Fn(F, F) -> F,
    ) -> Result<Vec<F>> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(op, self, rhs));
        }
        let (a, b) = (self.data(), rhs.data());
        Ok(a.iter().zip(b.iter()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_same(rhs, "add", |a, b| a + b)?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Add {
                lhs: self.clone(),
                rhs: rhs.clone(),
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_same(rhs, "sub", |a, b| a - b)?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Sub {
                lhs: self.clone(),
                rhs: rhs.clone(),
            },
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_same(rhs, "mul", |a, b| a * b)?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Mul {
                lhs: self.clone(),
                rhs: rhs.clone(),
            },
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor<F> {
        let k = F::lit(factor);
        let out = self.data().iter().map(|&v| v * k).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Scale {
                input: self.clone(),
                factor: k,
            },
        )
    }

    /// Adds a vector of length `d` to every trailing row of width `d`.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let width = bias.numel();
        if bias.rank() != 1 || self.shape().last() != Some(&width) {
            return Err(mismatch("add_bias", self, bias));
        }
        let mut out = self.to_vec();
        let b = bias.data();
        for row in out.chunks_exact_mut(width) {
            row.iter_mut().zip(b.iter()).for_each(|(v, &b)| *v += b);
        }
        drop(b);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::AddBias {
                input: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Scales row `r` of an `N x d` matrix by `weights[r]`; `weights` holds
    /// `N` values in any shape (`[N]` or `[N, 1]`).
    pub fn mul_rows(&self, weights: &Tensor<F>) -> Result<Tensor<F>> {
        let (rows, width) = self.dims2("mul_rows")?;
        if weights.numel() != rows {
            return Err(mismatch("mul_rows", self, weights));
        }
        let mut out = self.to_vec();
        let w = weights.data();
        for (row, &wr) in out.chunks_exact_mut(width).zip(w.iter()) {
            row.iter_mut().for_each(|v| *v *= wr);
        }
        drop(w);
        Ok(Tensor::from_op(
            vec![rows, width],
            out,
            Op::MulRows {
                input: self.clone(),
                weights: weights.clone(),
            },
        ))
    }

    /// `x * w + b` for `x: N x d_in`, `w: d_in x d_out`, `b: d_out`.
    pub fn linear(&self, weight: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add_bias(b),
            None => Ok(y),
        }
    }

    /// Softmax along `axis`, shifted by the running maximum so large logits
    /// cannot overflow.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                shape: self.shape().to_vec(),
            });
        }
        let (outer, len, inner) = axis_geometry(self.shape(), axis);
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = F::neg_infinity();
                for j in 0..len {
                    max = max.max(out[base + j * inner]);
                }
                let mut total = F::zero();
                for j in 0..len {
                    let ix = base + j * inner;
                    out[ix] = (out[ix] - max).exp();
                    total += out[ix];
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Softmax {
                input: self.clone(),
                outer,
                len,
                inner,
            },
        ))
    }

    /// Gaussian-error linear unit, exact erf form `x * Phi(x)`. This is the
    /// only GELU variant in the crate.
    pub fn gelu(&self) -> Tensor<F> {
        let half = F::lit(0.5);
        let inv_sqrt2 = F::lit(std::f64::consts::FRAC_1_SQRT_2);
        let out = self
            .data()
            .iter()
            .map(|&x| half * x * (F::one() + (x * inv_sqrt2).erf()))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::Gelu {
                input: self.clone(),
            },
        )
    }

    /// Normalizes each trailing row of width `d` to zero mean and unit
    /// variance (biased estimator), then applies `gamma` and `beta`.
    pub fn layernorm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let width = gamma.numel();
        if gamma.rank() != 1 || self.shape().last() != Some(&width) {
            return Err(mismatch("layernorm", self, gamma));
        }
        if beta.shape() != gamma.shape() {
            return Err(mismatch("layernorm", gamma, beta));
        }
        if eps <= 0.0 {
            return Err(TensorError::Invalid(format!(
                "layernorm: eps must be positive, got {eps}"
            )));
        }
        let eps = F::lit(eps);
        let d = F::lit(width as f64);
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let rows = x.len() / width;
        let mut normalized = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks_exact(width) {
            let mean = row.iter().copied().sum::<F>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / d;
            let rstd = F::one() / (var + eps).sqrt();
            inv_std.push(rstd);
            for j in 0..width {
                let xh = (row[j] - mean) * rstd;
                normalized.push(xh);
                out.push(xh * gm[j] + bt[j]);
            }
        }
        drop((x, gm, bt));
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                input: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                normalized,
                inv_std,
            },
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?;
        if axis >= first.rank() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: first.shape().to_vec(),
            });
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", first, p));
            }
            shape[axis] += p.shape()[axis];
        }
        let (outer, _, inner) = axis_geometry(first.shape(), axis);
        let chunks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for (d, &chunk) in datas.iter().zip(&chunks) {
                out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(datas);
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// The slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis {
                op: "narrow",
                axis,
                shape: self.shape().to_vec(),
            });
        }
        if len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::Invalid(format!(
                "narrow: range {start}..{} outside axis {axis} of {:?}",
                start + len,
                self.shape()
            )));
        }
        let (outer, full, inner) = axis_geometry(self.shape(), axis);
        let in_chunk = full * inner;
        let out_chunk = len * inner;
        let offset = start * inner;
        let x = self.data();
        let mut out = Vec::with_capacity(outer * out_chunk);
        for o in 0..outer {
            let base = o * in_chunk + offset;
            out.extend_from_slice(&x[base..base + out_chunk]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            shape,
            out,
            Op::Narrow {
                input: self.clone(),
                outer,
                in_chunk,
                offset,
                out_chunk,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape {
                input: self.clone(),
            },
        ))
    }

    /// `out.flat[i] = self.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(TensorError::Invalid(format!(
                "gather: {} indices cannot fill shape {shape:?}",
                index.len()
            )));
        }
        let n = self.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::Invalid(format!(
                "gather: index {bad} out of range for {n} elements"
            )));
        }
        let x = self.data();
        let out = index.iter().map(|&i| x[i]).collect();
        drop(x);
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            Op::Gather {
                input: self.clone(),
                index,
            },
        ))
    }

    /// Bilinear upsampling of a spatial map stored as `(H*W) x d` rows,
    /// channelwise, with half-pixel centers (align-corners = false).
    pub fn upsample_bilinear(
        &self,
        grid: (usize, usize),
        target: (usize, usize),
    ) -> Result<Tensor<F>> {
        let (rows, width) = self.dims2("upsample_bilinear")?;
        let (h, w) = grid;
        let (th, tw) = target;
        if h * w != rows {
            return Err(TensorError::Invalid(format!(
                "upsample_bilinear: grid {h}x{w} does not match {rows} rows"
            )));
        }
        if th < h || tw < w {
            return Err(TensorError::Downsample {
                from: grid,
                to: target,
            });
        }
        let ys = bilinear_axis(h, th);
        let xs = bilinear_axis(w, tw);
        let mut taps = Vec::with_capacity(th * tw);
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                taps.push([
                    (y0 * w + x0, F::lit((1.0 - wy) * (1.0 - wx))),
                    (y0 * w + x1, F::lit((1.0 - wy) * wx)),
                    (y1 * w + x0, F::lit(wy * (1.0 - wx))),
                    (y1 * w + x1, F::lit(wy * wx)),
                ]);
            }
        }
        let x = self.data();
        let mut out = vec![F::zero(); th * tw * width];
        for (row, row_taps) in out.chunks_exact_mut(width).zip(&taps) {
            for &(src, wt) in row_taps {
                if wt == F::zero() {
                    continue;
                }
                let s = &x[src * width..(src + 1) * width];
                row.iter_mut().zip(s).for_each(|(o, &v)| *o += wt * v);
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![th * tw, width],
            out,
            Op::Upsample {
                input: self.clone(),
                taps: taps.into(),
                width,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `N x C` logits, skipping rows labelled `ignore_index`.
    pub fn cross_entropy(&self, labels: &[usize], ignore_index: usize) -> Result<Tensor<F>> {
        let (rows, classes) = self.dims2("cross_entropy")?;
        if labels.len() != rows {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: {} labels for {rows} rows",
                labels.len()
            )));
        }
        let x = self.data();
        let mut probs = vec![F::zero(); x.len()];
        let mut total = F::zero();
        let mut count = 0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
            let p = &mut probs[r * classes..(r + 1) * classes];
            for (pc, &v) in p.iter_mut().zip(row) {
                *pc = (v - lse).exp();
            }
            if label == ignore_index {
                continue;
            }
            if label >= classes {
                return Err(TensorError::LabelOutOfRange {
                    label,
                    position: r,
                    classes,
                });
            }
            total += lse - row[label];
            count += 1;
        }
        drop(x);
        if count == 0 {
            return Err(TensorError::EmptyLoss);
        }
        let loss = total / F::lit(count as f64);
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits: self.clone(),
                probs,
                labels: labels.into(),
                ignore_index,
                classes,
                count,
            },
        ))
    }

    pub fn sum(&self) -> Tensor<F> {
        let total = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![1],
            vec![total],
            Op::Sum {
                input: self.clone(),
            },
        )
    }

    pub fn mean(&self) -> Tensor<F> {
        let n = F::lit(self.numel() as f64);
        let total: F = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![1],
            vec![total / n],
            Op::Mean {
                input: self.clone(),
            },
        )
    }
}
