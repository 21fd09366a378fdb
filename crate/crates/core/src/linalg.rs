//! Thin safe wrapper over the `matrixmultiply` GEMM kernel.

/// Row/column strides of a matrix view into a flat slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    /// Row-major layout with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Strides { row: cols, col: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols }
    }

    fn max_index(self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row + (cols - 1) * self.col
    }
}

/// `c = a · b + beta · c` where `a` is m×k and `b` is k×n, viewed through the given strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * sc.row + j * sc.col] *= beta;
            }
        }
        return;
    }
    assert!(sa.max_index(m, k) < a.len(), "gemm: lhs view out of bounds");
    assert!(sb.max_index(k, n) < b.len(), "gemm: rhs view out of bounds");
    assert!(sc.max_index(m, n) < c.len(), "gemm: output view out of bounds");
    // SAFETY: the three views were bounds-checked above, `c` is uniquely borrowed
    // and its strides describe non-overlapping elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, &a, Strides::row_major(3), &b, Strides::row_major(4), 0.0, &mut c, Strides::row_major(4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // aᵀ (3x2) times c (2x4)
        let mut d = vec![1.0; 12];
        gemm(3, 2, 4, &a, Strides::transposed(3), &c, Strides::row_major(4), 1.0, &mut d, Strides::row_major(4));
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..2).map(|p| a[p * 3 + i] * c[p * 4 + j]).sum::<f64>();
                assert!((d[i * 4 + j] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, 1001.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= 0.0));
    }
}
