//! Row-major matrix products used by the convolution and dense kernels.
//!
//! Every routine sums in a fixed order so results are bit-reproducible.

use crate::scalar::Scalar;

/// `c (m×n) (+)= a (m×k) · b (k×n)`.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    // Four output rows share each pass over a row of `b`.
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = b_row[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c (m×n) (+)= aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    let at = transpose(k, m, a);
    gemm_nn(m, k, n, &at, b, c, accumulate);
}

/// `c (m×n) (+)= a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c, accumulate);
}

/// Transposes a row-major `rows×cols` matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn all_layouts_agree_with_naive() {
        for (m, k, n) in [(3, 5, 4), (9, 7, 6), (8, 5, 16), (13, 6, 21)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
            let want = naive(m, k, n, &a, &b);

            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c, false);
            assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

            let at = transpose(m, k, &a);
            gemm_tn(m, k, n, &at, &b, &mut c, false);
            assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

            let bt = transpose(k, n, &b);
            gemm_nt(m, k, n, &a, &bt, &mut c, false);
            assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

            gemm_nn(m, k, n, &a, &b, &mut c, true);
            assert!(c.iter().zip(&want).all(|(x, y)| (x - 2.0 * y).abs() < 1e-12));
        }
    }
}
