//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Distance from `z` to the closed positive real half-axis.
///
/// Equals `|Im z|` when `Re z >= 0` and `|z|` otherwise. Every resolvent and
/// deterministic-equivalent norm bound in the crate is expressed through this
/// quantity.
pub fn delta_z(z: Complex64) -> f64 {
    if z.re >= 0.0 {
        z.im.abs()
    } else {
        z.norm()
    }
}

/// Hermitian part `(A + A^H) / 2`.
pub fn hermitian_part(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (a + a.adjoint()).scale(0.5)
}

/// Skew part `(A - A^H) / (2i)`; Hermitian whenever `A` is square.
pub fn imaginary_part(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (a - a.adjoint()) * Complex64::new(0.0, -0.5)
}

/// Eigenvalues of a Hermitian matrix, sorted ascending.
///
/// The input is symmetrized first so that tiny round-off asymmetry cannot
/// leak complex parts into the spectrum.
pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>) -> Vec<f64> {
    let h = hermitian_part(a);
    let mut eigs: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(f64::total_cmp);
    eigs
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig_hermitian(a: &DMatrix<Complex64>) -> f64 {
    *hermitian_eigenvalues(a)
        .first()
        .expect("matrix must be non-empty")
}

/// Spectral norm computed exactly as the square root of the largest
/// eigenvalue of `A^H A`. Intended for tests, reports and one-shot checks;
/// hot loops use the Frobenius norm as a cheap upper bound instead.
pub fn spectral_norm(a: &DMatrix<Complex64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    let eigs = gram.symmetric_eigenvalues();
    eigs.iter().fold(0.0f64, |acc, &e| acc.max(e)).max(0.0).sqrt()
}

/// `(1/dim) tr(A B)` without forming the product.
pub fn normalized_trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    assert_eq!(a.ncols(), b.nrows(), "shape mismatch in trace product");
    assert_eq!(a.nrows(), b.ncols(), "shape mismatch in trace product");
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc / (a.nrows() as f64)
}

/// Trapezoid rule on a (not necessarily uniform) grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for i in 1..x.len() {
        acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn delta_z_matches_geometry() {
        assert_eq!(delta_z(c(3.0, 2.0)), 2.0);
        assert_eq!(delta_z(c(3.0, -2.0)), 2.0);
        assert_eq!(delta_z(c(-3.0, 4.0)), 5.0);
        assert_eq!(delta_z(c(-1.0, 0.0)), 1.0);
    }

    #[test]
    fn spectral_norm_of_diag() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(3.0, 0.0),
            c(-7.0, 0.0),
        ]));
        assert!((spectral_norm(&m) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn trace_product_matches_full_product() {
        let a = DMatrix::from_fn(3, 3, |i, j| c((i + 2 * j) as f64, j as f64 - 1.0));
        let b = DMatrix::from_fn(3, 3, |i, j| c(0.5 * i as f64, (j as f64) * 0.25));
        let direct = (&a * &b).trace() / 3.0;
        let fast = normalized_trace_product(&a, &b);
        assert!((direct - fast).norm() < 1e-13);
    }

    #[test]
    fn trapezoid_on_linear_function_is_exact() {
        let x = [0.0, 0.5, 2.0];
        let y = [1.0, 2.0, 5.0];
        assert!((trapezoid(&x, &y) - 6.0).abs() < 1e-14);
    }
}
