//! Sampling of the correlated complex Gaussian row sequences, assembly of the
//! stacked block-Hankel matrix, and the sample covariance estimator.
//!
//! Sequences are drawn exactly by circulant embedding: the length
//! `n = N + L - 1` Toeplitz covariance is embedded in a circulant of length
//! `2n - 1`, diagonalized by the FFT, and circularly-symmetric Gaussians are
//! synthesized in the frequency domain. Draws are deterministic functions of
//! `(seed, row, trial)` through independent ChaCha streams, so Monte Carlo
//! loops parallelize without losing reproducibility.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::spectra::{AutocovSeq, EnsembleSpec, SpectralDensity, DEFAULT_QUADRATURE_POINTS};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("circulant embedding eigenvalue {value} at index {index} (row {row}) is below -1e-8; the spectrum is not nonnegative definite")]
    EmbeddingNotPsd { row: usize, index: usize, value: f64 },
    #[error("expected {expected} sequences, got {got}")]
    SequenceCount { expected: usize, got: usize },
    #[error("sequence {row} has length {got}, expected N + L - 1 = {expected}")]
    SequenceLength { row: usize, expected: usize, got: usize },
}

/// RNG stream for one `(seed, row, trial)` triple. Rows must stay below
/// 2^16; trials below 2^48.
pub fn stream_rng(seed: u64, row: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 16) | (row as u64 & 0xFFFF));
    rng
}

/// Prepared circulant embedding of one density at fixed `(N, L)`.
pub struct SequenceSampler {
    n_seq: usize,
    g: usize,
    amps: Vec<f64>,
    ifft: Arc<dyn Fft<f64>>,
}

impl SequenceSampler {
    pub fn new(
        model: &SpectralDensity,
        n: usize,
        l: usize,
        row: usize,
    ) -> Result<Self, SamplerError> {
        assert!(n >= 1 && l >= 1);
        let n_seq = n + l - 1;
        let g = 2 * n_seq - 1;
        let r = AutocovSeq::of(model, n_seq - 1, DEFAULT_QUADRATURE_POINTS);
        // Periodized lag sequence: c_k = r(k) for k < n_seq, c_{G-k} = conj r(k).
        let mut c = vec![Complex64::new(0.0, 0.0); g];
        for k in 0..n_seq {
            c[k] = r.get(k as i64);
        }
        for k in 1..n_seq {
            c[g - k] = r.get(-(k as i64));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(g);
        fwd.process(&mut c);
        let c_scale: f64 = 1.0 + c.iter().map(|v| v.norm()).sum::<f64>();
        let mut amps = Vec::with_capacity(g);
        for (index, lambda) in c.iter().enumerate() {
            debug_assert!(
                lambda.im.abs() <= 1e-9 * c_scale,
                "circulant eigenvalue {index} has imaginary part {}",
                lambda.im
            );
            if lambda.re < -1e-8 {
                return Err(SamplerError::EmbeddingNotPsd {
                    row,
                    index,
                    value: lambda.re,
                });
            }
            // Eigenvalues in (-1e-8, 0) are round-off; clip to zero.
            let lam = lambda.re.max(0.0);
            amps.push((lam / 2.0).sqrt() / ((g * n) as f64).sqrt());
        }
        let ifft = planner.plan_fft_inverse(g);
        Ok(Self {
            n_seq,
            g,
            amps,
            ifft,
        })
    }

    /// One sequence of length `N + L - 1` with covariance `r(j - k) / N` and
    /// zero pseudo-covariance.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut freq = Vec::with_capacity(self.g);
        for &amp in &self.amps {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            freq.push(Complex64::new(amp * u, amp * v));
        }
        self.ifft.process(&mut freq);
        freq.truncate(self.n_seq);
        freq
    }
}

/// Samplers for every row of an ensemble; share across Monte Carlo workers.
pub struct EnsembleSampler {
    spec: EnsembleSpec,
    samplers: Vec<SequenceSampler>,
}

impl EnsembleSampler {
    pub fn new(spec: &EnsembleSpec) -> Result<Self, SamplerError> {
        let samplers = spec
            .densities()
            .iter()
            .enumerate()
            .map(|(row, d)| SequenceSampler::new(d, spec.n(), spec.l(), row))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec: spec.clone(),
            samplers,
        })
    }

    pub fn draw(&self, seed: u64, trial: u64) -> BlockHankelSample {
        let sequences: Vec<Vec<Complex64>> = self
            .samplers
            .iter()
            .enumerate()
            .map(|(row, s)| s.draw(&mut stream_rng(seed, row, trial)))
            .collect();
        let w = build_block_hankel(&sequences, &self.spec)
            .expect("internally generated sequences always have the right shape");
        BlockHankelSample {
            spec: self.spec.clone(),
            sequences,
            w,
            seed,
            trial,
        }
    }
}

/// One realization: the generating sequences and the assembled matrix.
#[derive(Debug, Clone)]
pub struct BlockHankelSample {
    pub spec: EnsembleSpec,
    pub sequences: Vec<Vec<Complex64>>,
    pub w: DMatrix<Complex64>,
    pub seed: u64,
    pub trial: u64,
}

/// Draw one sequence for a single density (stream `(seed, row 0, trial 0)`).
pub fn sample_sequence(
    model: &SpectralDensity,
    n: usize,
    l: usize,
    seed: u64,
) -> Result<Vec<Complex64>, SamplerError> {
    let s = SequenceSampler::new(model, n, l, 0)?;
    Ok(s.draw(&mut stream_rng(seed, 0, 0)))
}

/// One realization of the ensemble at `trial = 0`.
pub fn draw_sample(spec: &EnsembleSpec, seed: u64) -> Result<BlockHankelSample, SamplerError> {
    Ok(EnsembleSampler::new(spec)?.draw(seed, 0))
}

/// Stack the `M` Hankel blocks: entry `(i + (m-1)L, j)` of the result equals
/// `sequences[m][i + j - 1]` (1-based), each block constant along
/// anti-diagonals.
pub fn build_block_hankel(
    sequences: &[Vec<Complex64>],
    spec: &EnsembleSpec,
) -> Result<DMatrix<Complex64>, SamplerError> {
    let (m, l, n) = (spec.m(), spec.l(), spec.n());
    if sequences.len() != m {
        return Err(SamplerError::SequenceCount {
            expected: m,
            got: sequences.len(),
        });
    }
    let n_seq = n + l - 1;
    for (row, s) in sequences.iter().enumerate() {
        if s.len() != n_seq {
            return Err(SamplerError::SequenceLength {
                row,
                expected: n_seq,
                got: s.len(),
            });
        }
    }
    let mut w = DMatrix::zeros(m * l, n);
    for (bm, s) in sequences.iter().enumerate() {
        for i in 0..l {
            for j in 0..n {
                w[(bm * l + i, j)] = s[i + j];
            }
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Prefactor `1/N`; coincides with `W W^H` up to end effects.
    PerSample,
    /// The printed `1/(ML)` prefactor, kept for traceability.
    PaperLiteral,
}

/// Sample covariance of the interleaved windowed vectors
/// `x_L(n) = (x_1(n..n+L-1), …, x_M(n..n+L-1))` with `x_m(n) = sqrt(N) w_m(n)`.
///
/// Only the observed range `n = 1..N` of each series enters: windows reaching
/// past `N` are zero-padded, which is exactly why the estimator differs from
/// `W W^H` in the `L - 1` trailing samples.
pub fn sample_covariance(
    spec: &EnsembleSpec,
    sequences: &[Vec<Complex64>],
    normalization: Normalization,
) -> Result<DMatrix<Complex64>, SamplerError> {
    let (m, l, n) = (spec.m(), spec.l(), spec.n());
    if sequences.len() != m {
        return Err(SamplerError::SequenceCount {
            expected: m,
            got: sequences.len(),
        });
    }
    let mut x = DMatrix::zeros(m * l, n);
    for (bm, s) in sequences.iter().enumerate() {
        if s.len() < n {
            return Err(SamplerError::SequenceLength {
                row: bm,
                expected: n,
                got: s.len(),
            });
        }
        for i in 0..l {
            for j in 0..n {
                let t = j + i;
                if t < n {
                    x[(bm * l + i, j)] = s[t];
                }
            }
        }
    }
    // x = sqrt(N) w combined with the 1/N prefactor leaves plain w products.
    let mut rhat = &x * x.adjoint();
    if normalization == Normalization::PaperLiteral {
        rhat *= Complex64::new(n as f64 / (m * l) as f64, 0.0);
    }
    Ok(rhat)
}

/// Spectral norm of `W W^H - R̂_L` under per-sample normalization.
pub fn end_effect_gap(sample: &BlockHankelSample) -> f64 {
    let rhat = sample_covariance(&sample.spec, &sample.sequences, Normalization::PerSample)
        .expect("sample carries its own sequences");
    let gram = &sample.w * sample.w.adjoint();
    let diff = gram - rhat;
    // Hermitian difference: spectral norm is the largest |eigenvalue|.
    crate::linalg::hermitian_eigenvalues(&diff)
        .into_iter()
        .fold(0.0f64, |acc, e| acc.max(e.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn white_spec(m: usize, l: usize, n: usize) -> EnsembleSpec {
        EnsembleSpec::uniform(m, l, n, SpectralDensity::white(1.0).unwrap()).unwrap()
    }

    #[test]
    fn determinism_same_seed_same_sequence() {
        let model = SpectralDensity::ar1(0.5).unwrap();
        let a = sample_sequence(&model, 16, 3, 7).unwrap();
        let b = sample_sequence(&model, 16, 3, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_sequence(&model, 16, 3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn determinism_across_trial_streams() {
        let spec = white_spec(3, 2, 8);
        let sampler = EnsembleSampler::new(&spec).unwrap();
        let s1 = sampler.draw(42, 5);
        let s2 = sampler.draw(42, 5);
        assert_eq!(s1.w, s2.w);
        assert_ne!(sampler.draw(42, 6).w, s1.w);
    }

    #[test]
    fn hankel_layout_unrolled() {
        // M = 1, L = 2, N = 3, sequence (s1..s4) -> rows [(s1,s2,s3),(s2,s3,s4)]
        let spec = white_spec(1, 2, 3);
        let s: Vec<Complex64> = (1..=4).map(|k| Complex64::new(k as f64, 0.0)).collect();
        let w = build_block_hankel(&[s.clone()], &spec).unwrap();
        for j in 0..3 {
            assert_eq!(w[(0, j)], s[j]);
            assert_eq!(w[(1, j)], s[j + 1]);
        }
    }

    #[test]
    fn hankel_random_probes() {
        let spec = white_spec(4, 3, 10);
        let sample = draw_sample(&spec, 31).unwrap();
        let mut rng = stream_rng(99, 0, 0);
        for _ in 0..50 {
            let m = rng.random_range(0..4usize);
            let i = rng.random_range(0..3usize);
            let j = rng.random_range(0..10usize);
            assert_eq!(sample.w[(m * 3 + i, j)], sample.sequences[m][i + j]);
            // Hankel structure: constant anti-diagonals within a block.
            if i + 1 < 3 && j >= 1 {
                assert_eq!(sample.w[(m * 3 + i, j)], sample.w[(m * 3 + i + 1, j - 1)]);
            }
        }
    }

    #[test]
    fn zero_sequences_give_zero_matrix_and_zero_gap() {
        let spec = white_spec(2, 2, 5);
        let zeros = vec![vec![Complex64::new(0.0, 0.0); 6]; 2];
        let w = build_block_hankel(&zeros, &spec).unwrap();
        assert!(w.iter().all(|v| v.norm() == 0.0));
        let rhat = sample_covariance(&spec, &zeros, Normalization::PerSample).unwrap();
        assert!(rhat.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let spec = white_spec(2, 2, 5);
        let seqs = vec![vec![Complex64::new(0.0, 0.0); 6]];
        assert!(matches!(
            build_block_hankel(&seqs, &spec),
            Err(SamplerError::SequenceCount { .. })
        ));
        let seqs = vec![
            vec![Complex64::new(0.0, 0.0); 6],
            vec![Complex64::new(0.0, 0.0); 5],
        ];
        assert!(matches!(
            build_block_hankel(&seqs, &spec),
            Err(SamplerError::SequenceLength { row: 1, .. })
        ));
    }

    #[test]
    fn end_effect_gap_is_zero_for_l_1() {
        let spec = white_spec(4, 1, 16);
        let sample = draw_sample(&spec, 3).unwrap();
        assert!(end_effect_gap(&sample) < 1e-13);
    }

    #[test]
    fn paper_literal_rescales_per_sample() {
        let spec = white_spec(2, 3, 12);
        let sample = draw_sample(&spec, 5).unwrap();
        let per = sample_covariance(&spec, &sample.sequences, Normalization::PerSample).unwrap();
        let lit =
            sample_covariance(&spec, &sample.sequences, Normalization::PaperLiteral).unwrap();
        let scale = Complex64::new(12.0 / 6.0, 0.0);
        assert!((per * scale - lit).norm() < 1e-12);
    }

    #[test]
    fn invalid_tabulated_spectrum_aborts_embedding() {
        // A strongly negative "density" cannot embed.
        let bad = SpectralDensity::tabulated_unchecked(vec![(0.0, 1.0), (0.5, -3.0), (1.0, 1.0)]);
        let err = SequenceSampler::new(&bad, 16, 2, 3);
        assert!(matches!(err, Err(SamplerError::EmbeddingNotPsd { row: 3, .. })));
    }
}
