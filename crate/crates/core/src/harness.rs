//! Monte Carlo verification harness: variance and bias sweeps over size
//! ladders at fixed ratio `c_N`, single-realization gap checks between the
//! empirical and deterministic Stieltjes transforms, and a KS-style
//! comparison of the eigenvalue histogram against the model density.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::equivalents::{self, SolveError, SolveOptions};
use crate::linalg::spectral_norm;
use crate::resolvent::{self, ResolventError};
use crate::sampler::{stream_rng, EnsembleSampler, SamplerError};
use crate::spectra::{EnsembleSpec, SpectraError, SpectralDensity};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("ladder entry (M, L, N) = ({m}, {l}, {n}) changes c_N from {expected} to {got}")]
    LadderRatioMismatch {
        m: usize,
        l: usize,
        n: usize,
        expected: f64,
        got: f64,
    },
    #[error("{statistic} needs at least {min} trials, got {got}")]
    TooFewTrials {
        statistic: &'static str,
        min: usize,
        got: usize,
    },
    #[error("need at least 20 histogram bins, got {0}")]
    TooFewBins(usize),
    #[error("model density did not converge at {failed} of {total} grid points")]
    DensityIncomplete { failed: usize, total: usize },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
}

/// How the per-row densities scale along a ladder.
#[derive(Debug, Clone)]
pub enum LadderDensities {
    /// Every row carries the same density at every size.
    Repeat(SpectralDensity),
    /// Rows cycle through the list at every size.
    Cycle(Vec<SpectralDensity>),
}

impl LadderDensities {
    pub fn spec(&self, m: usize, l: usize, n: usize) -> Result<EnsembleSpec, SpectraError> {
        match self {
            LadderDensities::Repeat(d) => EnsembleSpec::uniform(m, l, n, d.clone()),
            LadderDensities::Cycle(list) => {
                let densities = (0..m).map(|i| list[i % list.len()].clone()).collect();
                EnsembleSpec::new(m, l, n, densities)
            }
        }
    }
}

/// The deterministic `A` in `(1/ML) tr(A Q(z))`.
#[derive(Debug, Clone)]
pub enum ObservableMatrix {
    Identity,
    /// Seeded random Hermitian matrix normalized to unit spectral norm.
    RandomHermitianUnitNorm { seed: u64 },
}

impl ObservableMatrix {
    pub fn build(&self, ml: usize) -> DMatrix<Complex64> {
        match self {
            ObservableMatrix::Identity => DMatrix::identity(ml, ml),
            ObservableMatrix::RandomHermitianUnitNorm { seed } => {
                let mut rng = stream_rng(*seed, 0, u64::from_le_bytes(*b"obsmatrx"));
                let raw = DMatrix::from_fn(ml, ml, |_, _| {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                });
                let herm = crate::linalg::hermitian_part(&raw);
                let norm = spectral_norm(&herm);
                herm / Complex64::new(norm, 0.0)
            }
        }
    }
}

/// One row of a convergence study.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub m: usize,
    pub l: usize,
    pub n: usize,
    pub z: Complex64,
    pub statistic: &'static str,
    pub trials: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub seed: u64,
}

impl RateRow {
    /// Bias rows whose estimate sits inside its two-sigma band are
    /// statistically indistinguishable from zero at that trial count.
    pub fn unresolved(&self) -> bool {
        self.estimate <= 2.0 * self.stderr
    }
}

#[derive(Debug, Clone)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub slope: Option<SlopeFit>,
}

/// Unbiased sample variance of complex samples and its delete-one jackknife
/// standard error.
pub fn jackknife_variance(samples: &[Complex64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 3, "jackknife needs at least three samples");
    let nf = n as f64;
    let s1: Complex64 = samples.iter().sum();
    let s2: f64 = samples.iter().map(|v| v.norm_sqr()).sum();
    let theta = (s2 - s1.norm_sqr() / nf) / (nf - 1.0);
    let mut deleted = Vec::with_capacity(n);
    for v in samples {
        let s1d = s1 - v;
        let s2d = s2 - v.norm_sqr();
        let nd = nf - 1.0;
        deleted.push((s2d - s1d.norm_sqr() / nd) / (nd - 1.0));
    }
    let dbar = deleted.iter().sum::<f64>() / nf;
    let ss: f64 = deleted.iter().map(|d| (d - dbar).powi(2)).sum();
    let stderr = ((nf - 1.0) / nf * ss).sqrt();
    (theta, stderr)
}

/// Mean of complex samples and the standard error of that mean
/// (`sqrt((Var Re + Var Im) / n)`).
pub fn mean_and_stderr(samples: &[Complex64]) -> (Complex64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var: f64 = samples.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_ladder(ladder: &[(usize, usize, usize)]) -> Result<f64, HarnessError> {
    assert!(!ladder.is_empty());
    let (m0, l0, n0) = ladder[0];
    let expected = (m0 * l0) as f64 / n0 as f64;
    for &(m, l, n) in ladder {
        let got = (m * l) as f64 / n as f64;
        if (got - expected).abs() > 1e-12 {
            return Err(HarnessError::LadderRatioMismatch {
                m,
                l,
                n,
                expected,
                got,
            });
        }
    }
    Ok(expected)
}

/// Per-trial normalized traces `(1/ML) tr(A Q(z))`, in trial order.
fn trace_samples(
    spec: &EnsembleSpec,
    z: Complex64,
    trials: usize,
    seed: u64,
    a: &ObservableMatrix,
) -> Result<Vec<Complex64>, HarnessError> {
    let sampler = EnsembleSampler::new(spec)?;
    match a {
        ObservableMatrix::Identity => (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let sample = sampler.draw(seed, t);
                let eigs = resolvent::gram_eigs(&sample.w)?;
                Ok(resolvent::stieltjes_empirical(&eigs, z)?)
            })
            .collect(),
        ObservableMatrix::RandomHermitianUnitNorm { .. } => {
            let a_mat = a.build(spec.ml());
            (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let sample = sampler.draw(seed, t);
                    let q = resolvent::resolvent(&sample.w, z)?;
                    Ok(resolvent::trace_functional(&q, &a_mat))
                })
                .collect()
        }
    }
}

/// Sample variance of `(1/ML) tr(A Q(z))` per ladder size, with jackknife
/// standard errors and the fitted log-log slope against `M N`.
pub fn variance_sweep(
    densities: &LadderDensities,
    ladder: &[(usize, usize, usize)],
    z: Complex64,
    trials: usize,
    seed: u64,
    a: &ObservableMatrix,
) -> Result<RateReport, HarnessError> {
    check_ladder(ladder)?;
    if trials < 100 {
        return Err(HarnessError::TooFewTrials {
            statistic: "variance_sweep",
            min: 100,
            got: trials,
        });
    }
    let mut rows = Vec::with_capacity(ladder.len());
    for &(m, l, n) in ladder {
        let spec = densities.spec(m, l, n)?;
        let samples = trace_samples(&spec, z, trials, seed, a)?;
        let (var, stderr) = jackknife_variance(&samples);
        rows.push(RateRow {
            m,
            l,
            n,
            z,
            statistic: "var_norm_trace",
            trials,
            estimate: var,
            stderr,
            seed,
        });
    }
    let slope = fit_loglog_slope(&rows);
    Ok(RateReport { rows, slope })
}

/// `|mean (1/ML) tr(A (Q - T))|` per ladder size with the standard error of
/// the mean. Bias is second order, hence the higher trial floor.
pub fn bias_sweep(
    densities: &LadderDensities,
    ladder: &[(usize, usize, usize)],
    z: Complex64,
    trials: usize,
    seed: u64,
    a: &ObservableMatrix,
) -> Result<RateReport, HarnessError> {
    check_ladder(ladder)?;
    if trials < 500 {
        return Err(HarnessError::TooFewTrials {
            statistic: "bias_sweep",
            min: 500,
            got: trials,
        });
    }
    let mut rows = Vec::with_capacity(ladder.len());
    for &(m, l, n) in ladder {
        let spec = densities.spec(m, l, n)?;
        let pair = equivalents::solve_canonical(&spec, z, &SolveOptions::default())?;
        let a_mat = a.build(spec.ml());
        let t_ref = crate::linalg::normalized_trace_product(&a_mat, &pair.t.materialize());
        let samples = trace_samples(&spec, z, trials, seed, a)?;
        let centered: Vec<Complex64> = samples.iter().map(|s| s - t_ref).collect();
        let (mean, stderr) = mean_and_stderr(&centered);
        rows.push(RateRow {
            m,
            l,
            n,
            z,
            statistic: "bias_abs_mean_trace",
            trials,
            estimate: mean.norm(),
            stderr,
            seed,
        });
    }
    Ok(RateReport { rows, slope: None })
}

fn fit_loglog_slope(rows: &[RateRow]) -> Option<SlopeFit> {
    if rows.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| ((r.m * r.n) as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.estimate.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let df = xs.len().saturating_sub(2);
    if df == 0 {
        return Some(SlopeFit {
            slope,
            stderr: f64::INFINITY,
            ci_low: f64::NEG_INFINITY,
            ci_high: f64::INFINITY,
        });
    }
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (ss_res / df as f64 / sxx).sqrt();
    // two-sided 97.5% Student-t quantiles for the tiny df this sees
    let t = match df {
        1 => 12.706,
        2 => 4.303,
        3 => 3.182,
        4 => 2.776,
        5 => 2.571,
        _ => 2.0,
    };
    Some(SlopeFit {
        slope,
        stderr,
        ci_low: slope - t * stderr,
        ci_high: slope + t * stderr,
    })
}

/// Single-realization gap `|q_N(z) - t_N(z)|` and its components.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub q: Complex64,
    pub t: Complex64,
    pub gap: f64,
    pub re_gap: f64,
    pub im_gap: f64,
}

pub fn as_convergence_run(
    spec: &EnsembleSpec,
    z: Complex64,
    seed: u64,
) -> Result<GapReport, HarnessError> {
    let sample = crate::sampler::draw_sample(spec, seed)?;
    let eigs = resolvent::gram_eigs(&sample.w)?;
    let q = resolvent::stieltjes_empirical(&eigs, z)?;
    let pair = equivalents::solve_canonical(spec, z, &SolveOptions::default())?;
    let t = pair.t_scalar();
    let d = q - t;
    Ok(GapReport {
        q,
        t,
        gap: d.norm(),
        re_gap: d.re.abs(),
        im_gap: d.im.abs(),
    })
}

/// KS-style comparison of one realization's spectral cdf against the model
/// cdf integrated from the solved density.
#[derive(Debug, Clone)]
pub struct HistReport {
    pub distance: f64,
    pub bin_edges: Vec<f64>,
    pub empirical_cdf: Vec<f64>,
    pub model_cdf: Vec<f64>,
}

pub fn histogram_vs_density(
    spec: &EnsembleSpec,
    bins: usize,
    eps: f64,
    seed: u64,
) -> Result<HistReport, HarnessError> {
    if bins < 20 {
        return Err(HarnessError::TooFewBins(bins));
    }
    let sample = crate::sampler::draw_sample(spec, seed)?;
    let eigs = resolvent::gram_eigs(&sample.w)?;
    let hi = eigs.max() * 1.02 + 1e-6;
    let fine = equivalents::linspace(0.0, hi, 4 * bins + 1);
    // Shift the leading grid point off zero so delta_z stays positive even
    // for eps at the lower end.
    let fine: Vec<f64> = fine
        .iter()
        .map(|&x| if x == 0.0 { 1e-9 } else { x })
        .collect();
    let density = equivalents::density_from_stieltjes(spec, &fine, eps, 1e-8)?;
    let failed = density.converged.iter().filter(|&&c| !c).count();
    if failed > 0 {
        return Err(HarnessError::DensityIncomplete {
            failed,
            total: fine.len(),
        });
    }
    // cumulative trapezoid on the fine grid, sampled at every 4th node
    let mut cum = vec![0.0; fine.len()];
    for i in 1..fine.len() {
        cum[i] =
            cum[i - 1] + 0.5 * (density.f[i] + density.f[i - 1]) * (fine[i] - fine[i - 1]);
    }
    let atom = if spec.c_n() > 1.0 {
        1.0 - 1.0 / spec.c_n()
    } else {
        0.0
    };
    let ml = spec.ml() as f64;
    let mut bin_edges = Vec::with_capacity(bins + 1);
    let mut empirical_cdf = Vec::with_capacity(bins + 1);
    let mut model_cdf = Vec::with_capacity(bins + 1);
    let mut distance = 0.0f64;
    for b in 0..=bins {
        let edge = fine[4 * b];
        let emp = eigs
            .eigenvalues()
            .iter()
            .filter(|&&lam| lam <= edge)
            .count() as f64
            / ml;
        let model = (atom + cum[4 * b]).min(1.0);
        distance = distance.max((emp - model).abs());
        bin_edges.push(edge);
        empirical_cdf.push(emp);
        model_cdf.push(model);
    }
    Ok(HistReport {
        distance,
        bin_edges,
        empirical_cdf,
        model_cdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ladder_integrity_enforced() {
        let d = LadderDensities::Repeat(SpectralDensity::white(1.0).unwrap());
        let bad = [(8usize, 4usize, 64usize), (16, 4, 120)];
        let err = variance_sweep(&d, &bad, c(0.0, 2.0), 100, 1, &ObservableMatrix::Identity);
        assert!(matches!(err, Err(HarnessError::LadderRatioMismatch { .. })));
    }

    #[test]
    fn too_few_trials_rejected() {
        let d = LadderDensities::Repeat(SpectralDensity::white(1.0).unwrap());
        let ladder = [(2usize, 2usize, 8usize)];
        assert!(matches!(
            variance_sweep(&d, &ladder, c(0.0, 2.0), 1, 1, &ObservableMatrix::Identity),
            Err(HarnessError::TooFewTrials { .. })
        ));
        assert!(matches!(
            bias_sweep(&d, &ladder, c(0.0, 2.0), 499, 1, &ObservableMatrix::Identity),
            Err(HarnessError::TooFewTrials { .. })
        ));
    }

    #[test]
    fn jackknife_matches_naive_on_small_input() {
        let xs: Vec<Complex64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&v| c(v, 0.0))
            .collect();
        let (var, se) = jackknife_variance(&xs);
        let mean = 3.75;
        let naive: f64 = xs
            .iter()
            .map(|v| (v.re - mean).powi(2))
            .sum::<f64>()
            / 3.0;
        assert!((var - naive).abs() < 1e-12);
        assert!(se > 0.0);
    }

    #[test]
    fn observable_matrix_is_deterministic_and_normalized() {
        let a = ObservableMatrix::RandomHermitianUnitNorm { seed: 5 };
        let m1 = a.build(6);
        let m2 = a.build(6);
        assert_eq!(m1, m2);
        assert!((spectral_norm(&m1) - 1.0).abs() < 1e-10);
        assert!(spectral_norm(&(&m1 - m1.adjoint())) < 1e-12);
    }

    #[test]
    fn degenerate_zero_matrix_gap_pins_to_minus_one_over_z() {
        // W forced to 0: q = -1/z while t solves the true system.
        let spec =
            EnsembleSpec::uniform(4, 2, 16, SpectralDensity::white(1.0).unwrap()).unwrap();
        let z = c(0.0, 2.0);
        let zero_sample = crate::resolvent::SpectralSample::from_eigenvalues(vec![0.0; 8]);
        let q = resolvent::stieltjes_empirical(&zero_sample, z).unwrap();
        assert!((q - (-1.0 / z)).norm() < 1e-14);
        let pair = equivalents::solve_canonical(&spec, z, &SolveOptions::default()).unwrap();
        let gap = (q - pair.t_scalar()).norm();
        let direct = ((-1.0 / z) - pair.t_scalar()).norm();
        assert!((gap - direct).abs() < 1e-14);
    }
}
