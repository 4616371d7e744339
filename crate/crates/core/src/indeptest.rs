//! The log-determinant independence statistic: the normalized gap between
//! the log-determinant of a covariance matrix and the sum over its diagonal
//! blocks, together with its deterministic first-order centering.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use thiserror::Error;

use crate::equivalents::{self, SolveError};
use crate::linalg::trapezoid;
use crate::resolvent::SpectralSample;
use crate::spectra::EnsembleSpec;

#[derive(Debug, Error)]
pub enum IndepError {
    #[error("matrix dimension {dim} is not M * L = {ml}")]
    DimensionMismatch { dim: usize, ml: usize },
    #[error("input is not Hermitian (asymmetry {asymmetry:.3e}); the statistic is defined for covariance matrices")]
    NotHermitian { asymmetry: f64 },
    #[error("input is not positive definite; increase N (need roughly N >= ML) or disclose an explicit ridge before calling")]
    NotPositiveDefinite,
    #[error("eigenvalue {value} is not strictly positive; the log-det statistic is undefined (this happens when N < ML)")]
    NonPositiveEigenvalue { value: f64 },
    #[error("c_N = {c} >= 1: the spectrum carries an atom at zero and the log-det statistic diverges")]
    AtomAtZero { c: f64 },
    #[error("x grid for the log moment must be strictly positive")]
    NonPositiveGrid,
    #[error("model density did not converge at {failed} grid points")]
    DensityIncomplete { failed: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// The statistic and its log-det components.
#[derive(Debug, Clone)]
pub struct KappaStat {
    /// `(log det R - Σ_m log det R^{m,m}) / (ML)`; nonpositive for Hermitian
    /// positive definite inputs.
    pub kappa_hat: f64,
    pub logdet_full: f64,
    pub logdet_blocks: Vec<f64>,
}

fn cholesky_logdet(m: &DMatrix<Complex64>) -> Result<f64, IndepError> {
    let chol = Cholesky::new(m.clone()).ok_or(IndepError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        // A genuine Hermitian PD pivot is real positive; a complex pivot
        // means the factorization ran through a negative direction.
        if !(d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-8 * d.re) {
            return Err(IndepError::NotPositiveDefinite);
        }
        acc += d.re.ln();
    }
    Ok(2.0 * acc)
}

/// Compute the statistic from a Hermitian positive definite `ML × ML`
/// covariance matrix via Cholesky log-determinants.
pub fn kappa_hat(rhat: &DMatrix<Complex64>, m: usize, l: usize) -> Result<KappaStat, IndepError> {
    let ml = m * l;
    if rhat.nrows() != ml || rhat.ncols() != ml {
        return Err(IndepError::DimensionMismatch {
            dim: rhat.nrows(),
            ml,
        });
    }
    let asymmetry = (rhat - rhat.adjoint()).norm();
    if asymmetry > 1e-10 * rhat.norm().max(1.0) {
        return Err(IndepError::NotHermitian { asymmetry });
    }
    let eigs = crate::linalg::hermitian_eigenvalues(rhat);
    let (min_eig, max_eig) = (eigs[0], eigs[eigs.len() - 1]);
    if !(min_eig > 0.0 && min_eig > 1e-12 * max_eig) {
        return Err(IndepError::NotPositiveDefinite);
    }
    let logdet_full = cholesky_logdet(rhat)?;
    let mut logdet_blocks = Vec::with_capacity(m);
    for bm in 0..m {
        let block = rhat.view((bm * l, bm * l), (l, l)).into_owned();
        logdet_blocks.push(cholesky_logdet(&block)?);
    }
    let kappa = (logdet_full - logdet_blocks.iter().sum::<f64>()) / ml as f64;
    Ok(KappaStat {
        kappa_hat: kappa,
        logdet_full,
        logdet_blocks,
    })
}

/// `(1/ML) Σ_k log λ_k` over the eigenvalues of one realization.
pub fn logdet_stat(sample: &SpectralSample) -> Result<f64, IndepError> {
    let mut acc = 0.0;
    for &lam in sample.eigenvalues() {
        if !(lam > 0.0) {
            return Err(IndepError::NonPositiveEigenvalue { value: lam });
        }
        acc += lam.ln();
    }
    Ok(acc / sample.len() as f64)
}

/// Deterministic centering `∫ log(x) f(x) dx` with `f` recovered from the
/// solved transform on `x_grid`. Requires `c_N < 1` so the measure carries
/// no atom at zero and the log moment is finite.
pub fn predicted_logdet(
    spec: &EnsembleSpec,
    x_grid: &[f64],
    eps: f64,
) -> Result<f64, IndepError> {
    if spec.c_n() >= 1.0 {
        return Err(IndepError::AtomAtZero { c: spec.c_n() });
    }
    if x_grid.iter().any(|&x| x <= 0.0) {
        return Err(IndepError::NonPositiveGrid);
    }
    let density = equivalents::density_from_stieltjes(spec, x_grid, eps, 1e-9)?;
    let failed = density.converged.iter().filter(|&&c| !c).count();
    if failed > 0 {
        return Err(IndepError::DensityIncomplete { failed });
    }
    let integrand: Vec<f64> = x_grid
        .iter()
        .zip(&density.f)
        .map(|(&x, &f)| x.ln() * f)
        .collect();
    Ok(trapezoid(x_grid, &integrand))
}
