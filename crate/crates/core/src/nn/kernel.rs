//! Dense kernels behind the convolution layers.
//!
//! The three products the layers need are thin wrappers over the
//! cache-blocked GEMM in [`Scalar::gemm`], expressed through strides so no
//! operand is ever transposed in memory.

use crate::scalar::Scalar;

/// `out[o, :] += Σ_r w[o, r] · col[r, :]` with `w` of shape `m × k`, `col`
/// of shape `k × n` and `out` of shape `m × n`.
pub(crate) fn gemm_acc<T: Scalar>(w: &[T], col: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let (k_, n_) = (k as isize, n as isize);
    T::gemm(m, k, n, T::one(), w, k_, 1, col, n_, 1, T::one(), out, n_, 1);
}

/// `dw[o, r] += Σ_j g[o, j] · col[r, j]`.
pub(crate) fn gemm_abt_acc<T: Scalar>(g: &[T], col: &[T], dw: &mut [T], m: usize, k: usize, n: usize) {
    let (k_, n_) = (k as isize, n as isize);
    T::gemm(m, n, k, T::one(), g, n_, 1, col, 1, n_, T::one(), dw, k_, 1);
}

/// `dcol[r, :] = Σ_o w[o, r] · g[o, :]` (overwrites `dcol`).
pub(crate) fn gemm_atb<T: Scalar>(w: &[T], g: &[T], dcol: &mut [T], m: usize, k: usize, n: usize) {
    let (k_, n_) = (k as isize, n as isize);
    T::gemm(k, m, n, T::one(), w, 1, k_, g, n_, 1, T::zero(), dcol, n_, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for r in 0..k {
                    out[i * n + j] += a[i * k + r] * b[r * n + j];
                }
            }
        }
        out
    }

    fn data(len: usize, seed: u64) -> Vec<f64> {
        (0..len).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0).collect()
    }

    #[test]
    fn products_match_naive() {
        for &(m, k, n) in &[(5, 7, 19), (8, 4, 16), (1, 1, 3), (6, 9, 8)] {
            let w = data(m * k, 1);
            let x = data(k * n, 2);
            let mut out = vec![0.0; m * n];
            gemm_acc(&w, &x, &mut out, m, k, n);
            for (a, b) in out.iter().zip(naive_mul(&w, &x, m, k, n)) {
                assert!((a - b).abs() < 1e-12);
            }

            // dw = g · colᵀ
            let g = data(m * n, 3);
            let mut dw = vec![0.0; m * k];
            gemm_abt_acc(&g, &x, &mut dw, m, k, n);
            let xt: Vec<f64> = (0..n * k).map(|i| x[(i % k) * n + i / k]).collect();
            for (a, b) in dw.iter().zip(naive_mul(&g, &xt, m, n, k)) {
                assert!((a - b).abs() < 1e-12);
            }

            // dcol = wᵀ · g
            let mut dcol = vec![7.0; k * n];
            gemm_atb(&w, &g, &mut dcol, m, k, n);
            let wt: Vec<f64> = (0..k * m).map(|i| w[(i % m) * k + i / m]).collect();
            for (a, b) in dcol.iter().zip(naive_mul(&wt, &g, k, m, n)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
