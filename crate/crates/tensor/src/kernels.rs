//! Dense kernels shared by forward and backward passes.

use crate::Real;

/// Strides of a logical `rows x cols` operand inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    /// Plain row-major `rows x cols` storage.
    pub fn rows(cols: usize) -> Self {
        Layout {
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Layout {
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = a * b` (or `c += a * b` with `accumulate`), `a` is `m x k`, `b` is `k x n`,
/// `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    c: &mut [F],
    accumulate: bool,
) {
    assert!(la.span(m, k) <= a.len(), "gemm: lhs buffer too small");
    assert!(lb.span(k, n) <= b.len(), "gemm: rhs buffer too small");
    assert!(m * n <= c.len(), "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: spans checked above; the output is row-major m x n.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Bilinear interpolation taps for one axis, half-pixel centers
/// (align-corners = false). Returns `(lo, hi, weight_of_hi)` per output index.
pub(crate) fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let w = if hi == lo { 0.0 } else { pos - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}
