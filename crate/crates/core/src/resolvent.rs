//! Empirical spectral objects of one realization: Gram eigenvalues, the
//! resolvent and co-resolvent, the empirical Stieltjes transform and
//! normalized trace functionals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{delta_z, hermitian_part, normalized_trace_product};

/// Points closer than this to the positive real axis are rejected.
pub const MIN_DELTA_Z: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ResolventError {
    #[error("z = {z} is within {MIN_DELTA_Z} of the positive real axis")]
    PointTooCloseToSpectrum { z: Complex64 },
    #[error("Hermitian eigensolver produced a non-finite spectrum (dim {dim}, |G|_F = {frobenius})")]
    EigNonConvergence { dim: usize, frobenius: f64 },
    #[error("eigenvalue {value} is more negative than the clipping tolerance {tol}")]
    NegativeEigenvalue { value: f64, tol: f64 },
    #[error("resolvent matrix inversion failed at z = {z}")]
    Singular { z: Complex64 },
}

/// Eigenvalues of one Gram matrix `W W^H`, ascending and clipped at zero.
#[derive(Debug, Clone)]
pub struct SpectralSample {
    eigenvalues: Vec<f64>,
}

impl SpectralSample {
    /// Build directly from eigenvalues (ascending order enforced here).
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        Self { eigenvalues }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Eigenvalues of `W W^H` via a Hermitian eigensolver.
///
/// Round-off negatives above `-1e-10 max(1, λ_max)` are clipped to zero;
/// anything more negative is an error. When `N < ML` the sample contains at
/// least `ML - N` (clipped) zeros.
pub fn gram_eigs(w: &DMatrix<Complex64>) -> Result<SpectralSample, ResolventError> {
    let gram = hermitian_part(&(w * w.adjoint()));
    let mut eigs: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    if eigs.iter().any(|e| !e.is_finite()) {
        return Err(ResolventError::EigNonConvergence {
            dim: gram.nrows(),
            frobenius: gram.norm(),
        });
    }
    eigs.sort_by(f64::total_cmp);
    let lam_max = eigs.last().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-10 * lam_max.max(1.0);
    for e in eigs.iter_mut() {
        if *e < -tol {
            return Err(ResolventError::NegativeEigenvalue { value: *e, tol });
        }
        // Symmetric dead band: rank-deficient Grams come out with exact zeros.
        *e = if e.abs() <= tol { 0.0 } else { *e };
    }
    Ok(SpectralSample { eigenvalues: eigs })
}

fn check_point(z: Complex64) -> Result<(), ResolventError> {
    if delta_z(z) < MIN_DELTA_Z {
        Err(ResolventError::PointTooCloseToSpectrum { z })
    } else {
        Ok(())
    }
}

/// `Q(z) = (W W^H - z I)^{-1}`.
pub fn resolvent(w: &DMatrix<Complex64>, z: Complex64) -> Result<DMatrix<Complex64>, ResolventError> {
    check_point(z)?;
    let ml = w.nrows();
    let mut shifted = w * w.adjoint();
    for i in 0..ml {
        shifted[(i, i)] -= z;
    }
    shifted
        .try_inverse()
        .ok_or(ResolventError::Singular { z })
}

/// Co-resolvent `Q̃(z) = (W^H W - z I_N)^{-1}`.
pub fn co_resolvent(
    w: &DMatrix<Complex64>,
    z: Complex64,
) -> Result<DMatrix<Complex64>, ResolventError> {
    check_point(z)?;
    let n = w.ncols();
    let mut shifted = w.adjoint() * w;
    for i in 0..n {
        shifted[(i, i)] -= z;
    }
    shifted
        .try_inverse()
        .ok_or(ResolventError::Singular { z })
}

/// Empirical Stieltjes transform `(1/ML) Σ_k 1 / (λ_k - z)`.
pub fn stieltjes_empirical(
    sample: &SpectralSample,
    z: Complex64,
) -> Result<Complex64, ResolventError> {
    check_point(z)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for &lam in sample.eigenvalues() {
        acc += 1.0 / (Complex64::new(lam, 0.0) - z);
    }
    Ok(acc / sample.len() as f64)
}

/// Normalized trace functional `(1/ML) tr(A Q)`.
pub fn trace_functional(q: &DMatrix<Complex64>, a: &DMatrix<Complex64>) -> Complex64 {
    normalized_trace_product(a, q)
}
