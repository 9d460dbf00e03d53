//! Raw numeric kernels on row-major slices.
//!
//! All kernels use a fixed loop order, so results are bitwise reproducible
//! for a given build.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`.
pub fn gemm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    for (a_row, c_row) in a.chunks_exact(k.max(1)).zip(c.chunks_exact_mut(n)).take(m) {
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `a[m×k] · b[k×n]` into a fresh buffer.
pub fn gemm<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    gemm_acc(a, b, &mut c, m, k, n);
    c
}

/// Transpose of a row-major `rows×cols` matrix.
pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// `log Σ exp(row)` with max subtraction.
pub fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = gemm::<f64>(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f64> = (0..12).map(f64::from).collect();
        let t = transpose(&a, 3, 4);
        assert_eq!(t[1], a[4]);
        assert_eq!(transpose(&t, 4, 3), a);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }
}
