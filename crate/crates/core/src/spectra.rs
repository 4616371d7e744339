//! Spectral density models for the row sequences, their autocovariance
//! sequences, and validation of the standing positivity/summability
//! assumptions on an ensemble.
//!
//! Each row `m` of the block-Hankel matrix is driven by a stationary complex
//! Gaussian sequence with spectral density `S_m` on `[0, 1]` and
//! autocovariances `r_m(k) = ∫ S_m(ν) e^{2πiνk} dν`. White, AR(1) and
//! raised-cosine densities carry closed-form autocovariances; tabulated
//! densities fall back to periodic trapezoid quadrature.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Default number of quadrature nodes for tabulated autocovariances.
pub const DEFAULT_QUADRATURE_POINTS: usize = 4096;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("white noise level must be positive and finite, got {0}")]
    InvalidLevel(f64),
    #[error("ar1 coefficient must lie in (-1, 1), got {0}")]
    InvalidAr1(f64),
    #[error("raised-cosine amplitude must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("tabulated density needs at least two grid points")]
    TabulatedTooShort,
    #[error("tabulated density grid must be strictly increasing from 0 to 1")]
    TabulatedBadGrid,
    #[error("tabulated density must be strictly positive and finite: value {value} at nu = {nu}")]
    TabulatedNotPositive { nu: f64, value: f64 },
    #[error("tabulated density must close periodically: S(0) = {at_zero} but S(1) = {at_one}")]
    TabulatedNotPeriodic { at_zero: f64, at_one: f64 },
    #[error("ensemble declares M = {m} rows but carries {got} densities")]
    DensityCountMismatch { m: usize, got: usize },
    #[error("ensemble dimensions must be positive, got M = {m}, L = {l}, N = {n}")]
    InvalidDimensions { m: usize, l: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    White { level: f64 },
    Ar1 { a: f64 },
    RaisedCosine { beta: f64 },
    Tabulated { grid: Vec<(f64, f64)> },
}

/// A strictly positive spectral density on `[0, 1]` with `S(0) = S(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    family: Family,
}

impl SpectralDensity {
    /// Flat density `S(ν) = σ²`; autocovariance `r(k) = σ² δ_k`.
    pub fn white(level: f64) -> Result<Self, SpectraError> {
        if !(level.is_finite() && level > 0.0) {
            return Err(SpectraError::InvalidLevel(level));
        }
        Ok(Self {
            family: Family::White { level },
        })
    }

    /// First-order autoregressive density
    /// `S(ν) = (1 - a²) / |1 - a e^{2πiν}|²` with `r(k) = a^|k|`.
    pub fn ar1(a: f64) -> Result<Self, SpectraError> {
        if !(a.is_finite() && a.abs() < 1.0) {
            return Err(SpectraError::InvalidAr1(a));
        }
        Ok(Self {
            family: Family::Ar1 { a },
        })
    }

    /// `S(ν) = 1 + β cos(2πν)`; autocovariance `r(0) = 1`, `r(±1) = β/2`.
    pub fn raised_cosine(beta: f64) -> Result<Self, SpectraError> {
        if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
            return Err(SpectraError::InvalidBeta(beta));
        }
        Ok(Self {
            family: Family::RaisedCosine { beta },
        })
    }

    /// Piecewise-linear density through `(ν, value)` nodes. The grid must be
    /// strictly increasing, start at `ν = 0`, end at `ν = 1`, carry strictly
    /// positive finite values, and close periodically.
    pub fn tabulated(grid: Vec<(f64, f64)>) -> Result<Self, SpectraError> {
        if grid.len() < 2 {
            return Err(SpectraError::TabulatedTooShort);
        }
        if grid[0].0 != 0.0 || grid[grid.len() - 1].0 != 1.0 {
            return Err(SpectraError::TabulatedBadGrid);
        }
        for w in grid.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(SpectraError::TabulatedBadGrid);
            }
        }
        for &(nu, value) in &grid {
            if !(value.is_finite() && value > 0.0) {
                return Err(SpectraError::TabulatedNotPositive { nu, value });
            }
        }
        let at_zero = grid[0].1;
        let at_one = grid[grid.len() - 1].1;
        if (at_zero - at_one).abs() > 1e-12 * at_zero.abs().max(1.0) {
            return Err(SpectraError::TabulatedNotPeriodic { at_zero, at_one });
        }
        Ok(Self {
            family: Family::Tabulated { grid },
        })
    }

    /// Tabulated density without the construction-time checks. Exists so the
    /// ensemble validator (and its tests) can be exercised on inputs that
    /// violate the positivity assumption.
    pub fn tabulated_unchecked(grid: Vec<(f64, f64)>) -> Self {
        Self {
            family: Family::Tabulated { grid },
        }
    }

    /// Evaluate `S(ν)` for `ν ∈ [0, 1]`.
    pub fn eval(&self, nu: f64) -> f64 {
        assert!(
            (0.0..=1.0).contains(&nu),
            "spectral density evaluated outside [0, 1]: {nu}"
        );
        match &self.family {
            Family::White { level } => *level,
            Family::Ar1 { a } => {
                let c = (2.0 * std::f64::consts::PI * nu).cos();
                (1.0 - a * a) / (1.0 - 2.0 * a * c + a * a)
            }
            Family::RaisedCosine { beta } => 1.0 + beta * (2.0 * std::f64::consts::PI * nu).cos(),
            Family::Tabulated { grid } => {
                let idx = grid.partition_point(|&(x, _)| x <= nu);
                if idx == 0 {
                    return grid[0].1;
                }
                if idx >= grid.len() {
                    return grid[grid.len() - 1].1;
                }
                let (x0, y0) = grid[idx - 1];
                let (x1, y1) = grid[idx];
                let t = (nu - x0) / (x1 - x0);
                y0 + t * (y1 - y0)
            }
        }
    }

    /// Autocovariance `r(k) = ∫₀¹ S(ν) e^{2πiνk} dν`.
    ///
    /// Closed-form families bypass quadrature entirely; tabulated densities
    /// use the periodic trapezoid rule with at least `4|k| + 64` nodes.
    pub fn autocovariance(&self, k: i64, quadrature_points: usize) -> Complex64 {
        match &self.family {
            Family::White { level } => {
                if k == 0 {
                    Complex64::new(*level, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Family::Ar1 { a } => Complex64::new(a.powi(k.unsigned_abs() as i32), 0.0),
            Family::RaisedCosine { beta } => match k {
                0 => Complex64::new(1.0, 0.0),
                1 | -1 => Complex64::new(beta / 2.0, 0.0),
                _ => Complex64::new(0.0, 0.0),
            },
            Family::Tabulated { .. } => {
                let q = quadrature_points.max(4 * k.unsigned_abs() as usize + 64);
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..q {
                    let nu = j as f64 / q as f64;
                    let phase = 2.0 * std::f64::consts::PI * nu * k as f64;
                    acc += self.eval(nu) * Complex64::new(phase.cos(), phase.sin());
                }
                acc / q as f64
            }
        }
    }

    /// True when the autocovariance has a closed form (no quadrature).
    pub fn is_closed_form(&self) -> bool {
        !matches!(self.family, Family::Tabulated { .. })
    }

    /// Minimum and maximum of the density over a uniform grid of
    /// `points + 1` samples `j / points`.
    pub fn grid_min_max(&self, points: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..=points {
            let v = self.eval(j as f64 / points as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::White { .. } => "white",
            Family::Ar1 { .. } => "ar1",
            Family::RaisedCosine { .. } => "raised-cosine",
            Family::Tabulated { .. } => "tabulated",
        }
    }
}

/// Precomputed autocovariance lags `r(0..=max_lag)` of one density.
/// Negative lags follow from Hermitian symmetry `r(-k) = conj r(k)`;
/// lags beyond `max_lag` read as zero, so callers must size `max_lag`
/// to cover every lag their operator touches.
#[derive(Debug, Clone)]
pub struct AutocovSeq {
    lags: Vec<Complex64>,
}

impl AutocovSeq {
    pub fn of(model: &SpectralDensity, max_lag: usize, quadrature_points: usize) -> Self {
        let lags = (0..=max_lag as i64)
            .map(|k| model.autocovariance(k, quadrature_points))
            .collect();
        Self { lags }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    #[inline]
    pub fn get(&self, k: i64) -> Complex64 {
        let a = k.unsigned_abs() as usize;
        if a >= self.lags.len() {
            Complex64::new(0.0, 0.0)
        } else if k >= 0 {
            self.lags[a]
        } else {
            self.lags[a].conj()
        }
    }
}

/// Dimensions and per-row densities of one block-Hankel ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    m: usize,
    l: usize,
    n: usize,
    densities: Vec<SpectralDensity>,
    c: f64,
}

impl EnsembleSpec {
    pub fn new(
        m: usize,
        l: usize,
        n: usize,
        densities: Vec<SpectralDensity>,
    ) -> Result<Self, SpectraError> {
        if m == 0 || l == 0 || n == 0 {
            return Err(SpectraError::InvalidDimensions { m, l, n });
        }
        if densities.len() != m {
            return Err(SpectraError::DensityCountMismatch {
                m,
                got: densities.len(),
            });
        }
        let c = (m * l) as f64 / n as f64;
        Ok(Self {
            m,
            l,
            n,
            densities,
            c,
        })
    }

    /// All `M` rows governed by the same density.
    pub fn uniform(
        m: usize,
        l: usize,
        n: usize,
        density: SpectralDensity,
    ) -> Result<Self, SpectraError> {
        Self::new(m, l, n, vec![density; m])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ml(&self) -> usize {
        self.m * self.l
    }

    /// Dimension ratio `c_N = ML / N`.
    pub fn c_n(&self) -> f64 {
        self.c
    }

    pub fn densities(&self) -> &[SpectralDensity] {
        &self.densities
    }

    pub fn density(&self, m: usize) -> &SpectralDensity {
        &self.densities[m]
    }

    /// Largest lag any operator in the crate reads: `N + L`.
    pub fn max_lag(&self) -> usize {
        self.n + self.l
    }

    /// Autocovariance sequences of all rows up to `max_lag()`.
    pub fn autocov_seqs(&self) -> Vec<AutocovSeq> {
        let lag = self.max_lag();
        self.densities
            .iter()
            .map(|d| AutocovSeq::of(d, lag, DEFAULT_QUADRATURE_POINTS))
            .collect()
    }
}

/// Outcome of checking an ensemble against the standing assumptions.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// `(grid min, grid max)` of each density.
    pub density_ranges: Vec<(f64, f64)>,
    /// `Σ_{|n| ≤ cutoff} ((1/M) Σ_m |r_m(n)|²)^{1/2}`.
    pub truncated_sum: f64,
    /// Rows whose grid minimum is not strictly positive (0-based).
    pub failures: Vec<usize>,
    pub pass: bool,
}

/// Check the positivity bounds and the square-mean summability of the row
/// autocovariances at the concrete ensemble sizes.
///
/// `lag_cutoff` must be at least `N + L` so every lag the model reads is
/// covered. Densities are scanned on a 1024-point grid.
pub fn validate_ensemble(spec: &EnsembleSpec, lag_cutoff: usize) -> ValidationReport {
    assert!(
        lag_cutoff >= spec.max_lag(),
        "lag cutoff {lag_cutoff} below the model's maximal lag {}",
        spec.max_lag()
    );
    let mut density_ranges = Vec::with_capacity(spec.m());
    let mut failures = Vec::new();
    for (m, d) in spec.densities().iter().enumerate() {
        let (lo, hi) = d.grid_min_max(1024);
        if !(lo > 0.0) {
            failures.push(m);
        }
        density_ranges.push((lo, hi));
    }
    let seqs: Vec<AutocovSeq> = spec
        .densities()
        .iter()
        .map(|d| AutocovSeq::of(d, lag_cutoff, DEFAULT_QUADRATURE_POINTS))
        .collect();
    let mut truncated_sum = 0.0;
    for n in -(lag_cutoff as i64)..=(lag_cutoff as i64) {
        let mean_sq: f64 = seqs.iter().map(|s| s.get(n).norm_sqr()).sum::<f64>() / spec.m() as f64;
        truncated_sum += mean_sq.sqrt();
    }
    let pass = failures.is_empty() && truncated_sum.is_finite();
    ValidationReport {
        density_ranges,
        truncated_sum,
        failures,
        pass,
    }
}

/// The `M × M` diagonal matrix `diag(r_1(k), …, r_M(k))`.
pub fn correlation_diag(spec: &EnsembleSpec, k: i64) -> DMatrix<Complex64> {
    assert!(
        k.unsigned_abs() as usize <= spec.max_lag(),
        "lag {k} beyond the model's maximal lag {}",
        spec.max_lag()
    );
    DMatrix::from_fn(spec.m(), spec.m(), |i, j| {
        if i == j {
            spec.density(i)
                .autocovariance(k, DEFAULT_QUADRATURE_POINTS)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn white_eval_is_constant() {
        let d = SpectralDensity::white(1.0).unwrap();
        assert_eq!(d.eval(0.37), 1.0);
        assert_eq!(d.eval(0.0), d.eval(1.0));
    }

    #[test]
    fn raised_cosine_eval_at_zero() {
        let d = SpectralDensity::raised_cosine(0.5).unwrap();
        assert_relative_eq!(d.eval(0.0), 1.5, max_relative = 1e-15);
    }

    #[test]
    fn ar1_eval_at_zero() {
        let d = SpectralDensity::ar1(0.5).unwrap();
        assert_relative_eq!(d.eval(0.0), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(SpectralDensity::white(0.0).is_err());
        assert!(SpectralDensity::white(f64::NAN).is_err());
        assert!(SpectralDensity::ar1(1.0).is_err());
        assert!(SpectralDensity::raised_cosine(1.0).is_err());
        assert!(SpectralDensity::raised_cosine(-0.1).is_err());
        assert!(SpectralDensity::tabulated(vec![(0.0, 1.0)]).is_err());
        assert!(SpectralDensity::tabulated(vec![(0.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(SpectralDensity::tabulated(vec![(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn white_autocovariance() {
        let d = SpectralDensity::white(1.0).unwrap();
        assert_eq!(d.autocovariance(0, 64), Complex64::new(1.0, 0.0));
        assert_eq!(d.autocovariance(3, 64), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn raised_cosine_autocovariance() {
        let beta = 0.7;
        let d = SpectralDensity::raised_cosine(beta).unwrap();
        assert_eq!(d.autocovariance(1, 64).re, beta / 2.0);
        assert_eq!(d.autocovariance(-1, 64).re, beta / 2.0);
        for k in 2..6 {
            assert_eq!(d.autocovariance(k, 64), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn ar1_autocovariance_closed_form_and_quadrature_agree() {
        let d = SpectralDensity::ar1(0.5).unwrap();
        assert_relative_eq!(d.autocovariance(2, 4096).re, 0.25, epsilon = 1e-15);
        // Cross-check the closed form against trapezoid quadrature of the
        // density itself.
        for k in 0..6i64 {
            let q = 4096usize;
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..q {
                let nu = j as f64 / q as f64;
                let phase = 2.0 * std::f64::consts::PI * nu * k as f64;
                acc += d.eval(nu) * Complex64::new(phase.cos(), phase.sin());
            }
            acc /= q as f64;
            let closed = d.autocovariance(k, q);
            assert!(
                (acc - closed).norm() <= 1e-10,
                "lag {k}: quadrature {acc} vs closed form {closed}"
            );
        }
    }

    #[test]
    fn tabulated_autocovariance_of_flat_table_is_white() {
        let d = SpectralDensity::tabulated(vec![(0.0, 2.0), (0.5, 2.0), (1.0, 2.0)]).unwrap();
        assert_relative_eq!(d.autocovariance(0, 256).re, 2.0, epsilon = 1e-12);
        assert!(d.autocovariance(3, 256).norm() < 1e-12);
    }

    #[test]
    fn hermitian_symmetry_exact() {
        let models = [
            SpectralDensity::white(2.0).unwrap(),
            SpectralDensity::ar1(-0.6).unwrap(),
            SpectralDensity::raised_cosine(0.3).unwrap(),
            SpectralDensity::tabulated(vec![(0.0, 1.0), (0.25, 3.0), (0.8, 0.5), (1.0, 1.0)])
                .unwrap(),
        ];
        for d in &models {
            for k in 0..20i64 {
                let plus = d.autocovariance(k, 512);
                let minus = d.autocovariance(-k, 512);
                assert!(
                    (minus - plus.conj()).norm() <= 1e-12,
                    "family {}: r(-{k}) != conj r({k})",
                    d.family_name()
                );
            }
        }
    }

    #[test]
    fn fourier_coefficient_bound_on_random_lags() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let models = [
            SpectralDensity::ar1(0.8).unwrap(),
            SpectralDensity::raised_cosine(0.9).unwrap(),
            SpectralDensity::tabulated(vec![(0.0, 0.5), (0.3, 4.0), (0.7, 1.5), (1.0, 0.5)])
                .unwrap(),
        ];
        for d in &models {
            let (_, hi) = d.grid_min_max(1024);
            for _ in 0..100 {
                let k: i64 = rng.random_range(-40..=40);
                assert!(
                    d.autocovariance(k, 1024).norm() <= hi + 1e-12,
                    "family {}: |r({k})| exceeds the grid max",
                    d.family_name()
                );
            }
        }
    }

    #[test]
    fn ensemble_invariants() {
        let d = SpectralDensity::white(1.0).unwrap();
        let spec = EnsembleSpec::uniform(4, 2, 16, d.clone()).unwrap();
        assert_eq!(spec.ml(), 8);
        assert_eq!(spec.c_n(), 0.5);
        assert!(EnsembleSpec::new(3, 2, 16, vec![d.clone(); 2]).is_err());
        assert!(EnsembleSpec::new(0, 2, 16, vec![]).is_err());
    }

    #[test]
    fn validate_all_white_ensemble() {
        let spec = EnsembleSpec::uniform(4, 2, 16, SpectralDensity::white(1.0).unwrap()).unwrap();
        let report = validate_ensemble(&spec, spec.max_lag());
        assert!(report.pass);
        assert_relative_eq!(report.truncated_sum, 1.0, epsilon = 1e-14);
        for &(lo, hi) in &report.density_ranges {
            assert_eq!(lo, 1.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn validate_ar1_rows() {
        let spec = EnsembleSpec::uniform(3, 2, 12, SpectralDensity::ar1(0.9).unwrap()).unwrap();
        let report = validate_ensemble(&spec, spec.max_lag());
        assert!(report.pass);
        // min of the ar1 density is (1 - a) / (1 + a)
        let expected_min = (1.0 - 0.9) / (1.0 + 0.9);
        assert_relative_eq!(report.density_ranges[0].0, expected_min, epsilon = 1e-6);
        assert!(report.truncated_sum.is_finite());
    }

    #[test]
    fn validate_flags_tabulated_zero() {
        let bad = SpectralDensity::tabulated_unchecked(vec![(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]);
        let spec = EnsembleSpec::new(
            2,
            2,
            8,
            vec![SpectralDensity::white(1.0).unwrap(), bad],
        )
        .unwrap();
        let report = validate_ensemble(&spec, spec.max_lag());
        assert!(!report.pass);
        assert_eq!(report.failures, vec![1]);
    }

    #[test]
    fn correlation_diag_examples() {
        let white = EnsembleSpec::uniform(3, 2, 8, SpectralDensity::white(1.0).unwrap()).unwrap();
        let id = correlation_diag(&white, 0);
        let zero = correlation_diag(&white, 1);
        assert_eq!(id, DMatrix::identity(3, 3));
        assert_eq!(zero, DMatrix::zeros(3, 3));

        let coefs = [0.2, -0.4, 0.6];
        let spec = EnsembleSpec::new(
            3,
            2,
            8,
            coefs
                .iter()
                .map(|&a| SpectralDensity::ar1(a).unwrap())
                .collect(),
        )
        .unwrap();
        let diag = correlation_diag(&spec, 1);
        for (i, &a) in coefs.iter().enumerate() {
            assert_relative_eq!(diag[(i, i)].re, a, epsilon = 1e-15);
        }
    }

    #[test]
    fn toeplitz_covariance_of_valid_spectra_is_positive_definite() {
        use crate::linalg::min_eig_hermitian;
        let models = [
            SpectralDensity::ar1(0.7).unwrap(),
            SpectralDensity::raised_cosine(0.8).unwrap(),
            SpectralDensity::tabulated(vec![(0.0, 0.4), (0.4, 2.5), (0.6, 1.0), (1.0, 0.4)])
                .unwrap(),
        ];
        let (n, l) = (24, 4);
        for d in &models {
            let (lo, _) = d.grid_min_max(1024);
            let r = AutocovSeq::of(d, n + l, DEFAULT_QUADRATURE_POINTS);
            let dim = n + l;
            let cov = DMatrix::from_fn(dim, dim, |i, j| r.get(i as i64 - j as i64));
            let min_eig = min_eig_hermitian(&cov);
            assert!(
                min_eig >= lo - 1e-8,
                "family {}: min eig {min_eig} below grid min {lo}",
                d.family_name()
            );
        }
    }
}
