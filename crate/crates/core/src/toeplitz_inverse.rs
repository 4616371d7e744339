//! Inversion of dense complex Toeplitz matrices in `O(N^2)`.
//!
//! A bordered Levinson-type recursion grows the first and last columns of the
//! inverse one dimension at a time; the full inverse is then reconstructed
//! through its Gohberg-Semencul displacement structure
//! `B_{i,j} = B_{i-1,j-1} + (x_i v_j - p_i q_j) / x_1`. The recursion
//! requires every leading principal minor to be nonsingular, so an exact
//! zero (or numerically tiny) pivot triggers a dense LU fallback, as does a
//! failed residual probe on the reconstructed inverse.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::toeplitz_ops::{toeplitz_from_seq, LagSeq};

#[derive(Debug, Error)]
pub enum ToeplitzInverseError {
    #[error("Toeplitz matrix of dimension {n} is numerically singular")]
    Singular { n: usize },
    #[error("non-finite value encountered while inverting a Toeplitz matrix")]
    NonFinite,
}

/// Inverse of the `n × n` Toeplitz matrix with `(i, j)` entry `lags(i - j)`.
#[derive(Debug)]
pub struct ToeplitzInverse {
    pub matrix: DMatrix<Complex64>,
    /// True when the Levinson recursion broke down and the dense LU path
    /// produced the result instead.
    pub used_fallback: bool,
}

/// Relative pivot threshold below which the recursion is abandoned.
const PIVOT_TOL: f64 = 1e-13;
/// Residual threshold (relative to `1 + |a|_1 |x|_inf`) of the probe check.
const RESIDUAL_TOL: f64 = 1e-8;

pub fn invert(lags: &LagSeq, n: usize) -> Result<ToeplitzInverse, ToeplitzInverseError> {
    assert!(n >= 1);
    if let Some((x, y)) = levinson_first_last(lags, n) {
        if let Some(matrix) = gs_materialize(&x, &y) {
            if residual_ok(lags, n, &matrix) {
                return Ok(ToeplitzInverse {
                    matrix,
                    used_fallback: false,
                });
            }
        }
    }
    dense_fallback(lags, n)
}

/// First column `x = A^{-1} e_1` and last column `y = A^{-1} e_n` via the
/// coupled bordered recursion. Returns `None` on pivot breakdown.
fn levinson_first_last(lags: &LagSeq, n: usize) -> Option<(Vec<Complex64>, Vec<Complex64>)> {
    let a0 = lags.get(0);
    if a0.norm() == 0.0 {
        return None;
    }
    let inv0 = 1.0 / a0;
    if !inv0.is_finite() {
        return None;
    }
    let mut f = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    f.push(inv0);
    b.push(inv0);
    let mut f_next = Vec::with_capacity(n);
    let mut b_next = Vec::with_capacity(n);
    for m in 1..n {
        // eps = sum_j a(m + 1 - j) f[j], gamma = sum_j a(-j) b[j]  (1-based j)
        let mut eps = Complex64::new(0.0, 0.0);
        let mut gamma = Complex64::new(0.0, 0.0);
        for j in 0..m {
            eps += lags.get((m - j) as i64) * f[j];
            gamma += lags.get(-(1 + j as i64)) * b[j];
        }
        let pivot = Complex64::new(1.0, 0.0) - eps * gamma;
        if pivot.norm() <= PIVOT_TOL * (1.0 + (eps * gamma).norm()) || !pivot.is_finite() {
            return None;
        }
        let inv_pivot = 1.0 / pivot;
        f_next.clear();
        b_next.clear();
        // f' = ([f; 0] - eps [0; b]) / pivot ; b' = ([0; b] - gamma [f; 0]) / pivot
        f_next.push(f[0] * inv_pivot);
        b_next.push(-gamma * f[0] * inv_pivot);
        for j in 1..m {
            f_next.push((f[j] - eps * b[j - 1]) * inv_pivot);
            b_next.push((b[j - 1] - gamma * f[j]) * inv_pivot);
        }
        f_next.push(-eps * b[m - 1] * inv_pivot);
        b_next.push(b[m - 1] * inv_pivot);
        std::mem::swap(&mut f, &mut f_next);
        std::mem::swap(&mut b, &mut b_next);
    }
    Some((f, b))
}

/// Reconstruct the full inverse from its first column `x` and last column
/// `y` through the displacement recurrence. Uses the persymmetry of Toeplitz
/// inverses for the first row (`v_j = y_{n+1-j}`) and last row.
fn gs_materialize(x: &[Complex64], y: &[Complex64]) -> Option<DMatrix<Complex64>> {
    let n = x.len();
    let x1 = x[0];
    let max_x = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if x1.norm() <= 1e-13 * max_x {
        return None;
    }
    // Persymmetry consistency: B_{1,1} computed from either corner.
    if (x1 - y[n - 1]).norm() > 1e-6 * x1.norm().max(1e-300) {
        return None;
    }
    let inv_x1 = 1.0 / x1;
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        out[(0, j)] = y[n - 1 - j]; // first row by persymmetry
        out[(j, 0)] = x[j];
    }
    // p = (0, y_1, ..., y_{n-1}), q = (0, x_n, ..., x_2)
    for i in 1..n {
        for j in 1..n {
            let inc = x[i] * y[n - 1 - j] - y[i - 1] * x[n - j];
            out[(i, j)] = out[(i - 1, j - 1)] + inc * inv_x1;
        }
    }
    Some(out)
}

/// Probe `A b_k ≈ e_k` on the first and last columns of the reconstruction.
fn residual_ok(lags: &LagSeq, n: usize, inv: &DMatrix<Complex64>) -> bool {
    let a_l1: f64 = (-(n as i64 - 1)..=(n as i64 - 1))
        .map(|k| lags.get(k).norm())
        .sum();
    for &col in &[0usize, n - 1] {
        let mut max_entry = 0.0f64;
        for i in 0..n {
            max_entry = max_entry.max(inv[(i, col)].norm());
        }
        let scale = 1.0 + a_l1 * max_entry;
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += lags.get(i as i64 - k as i64) * inv[(k, col)];
            }
            let target = if i == col { 1.0 } else { 0.0 };
            let res = (acc - Complex64::new(target, 0.0)).norm();
            if !(res <= RESIDUAL_TOL * scale) {
                return false;
            }
        }
    }
    true
}

fn dense_fallback(lags: &LagSeq, n: usize) -> Result<ToeplitzInverse, ToeplitzInverseError> {
    let a = toeplitz_from_seq(lags, n);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ToeplitzInverseError::NonFinite);
    }
    match a.try_inverse() {
        Some(matrix) => {
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err(ToeplitzInverseError::NonFinite);
            }
            Ok(ToeplitzInverse {
                matrix,
                used_fallback: true,
            })
        }
        None => Err(ToeplitzInverseError::Singular { n }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lags(rng: &mut ChaCha8Rng, half: usize, dominant: f64) -> LagSeq {
        let mut seq = LagSeq::zeros(half);
        for k in -(half as i64)..=(half as i64) {
            seq.set(
                k,
                Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            );
        }
        // Diagonal dominance keeps every leading minor comfortably regular.
        seq.set(0, Complex64::new(dominant, 0.3));
        seq
    }

    #[test]
    fn matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for &n in &[1usize, 2, 3, 8, 33] {
            let lags = random_lags(&mut rng, n.saturating_sub(1), 4.0 + n as f64);
            let fast = invert(&lags, n).unwrap();
            assert!(!fast.used_fallback, "expected the fast path at n = {n}");
            let dense = toeplitz_from_seq(&lags, n).try_inverse().unwrap();
            let err = spectral_norm(&(&fast.matrix - &dense));
            assert!(err < 1e-9 * spectral_norm(&dense).max(1.0), "n = {n}: {err}");
        }
    }

    #[test]
    fn banded_sequences_work() {
        // Support much narrower than the dimension (white-like case).
        let mut lags = LagSeq::zeros(1);
        lags.set(0, Complex64::new(2.0, 1.0));
        lags.set(1, Complex64::new(0.4, 0.0));
        lags.set(-1, Complex64::new(0.1, -0.2));
        let n = 24;
        let fast = invert(&lags, n).unwrap();
        let dense = toeplitz_from_seq(&lags, n).try_inverse().unwrap();
        assert!(spectral_norm(&(&fast.matrix - &dense)) < 1e-10);
    }

    #[test]
    fn singular_leading_minor_falls_back_to_dense() {
        // a(0) = 0 but the matrix [[0, 1], [2, 0]] is invertible.
        let mut lags = LagSeq::zeros(1);
        lags.set(0, Complex64::new(0.0, 0.0));
        lags.set(-1, Complex64::new(1.0, 0.0));
        lags.set(1, Complex64::new(2.0, 0.0));
        let out = invert(&lags, 2).unwrap();
        assert!(out.used_fallback);
        let dense = toeplitz_from_seq(&lags, 2).try_inverse().unwrap();
        assert!(spectral_norm(&(&out.matrix - &dense)) < 1e-12);
    }

    #[test]
    fn singular_matrix_errors() {
        let lags = LagSeq::zeros(2); // all-zero matrix
        assert!(matches!(
            invert(&lags, 3),
            Err(ToeplitzInverseError::Singular { .. })
        ));
    }
}
