//! Toeplitzification operators.
//!
//! The scalar lag functional `tau(M)(l) = (1/R) tr(M J_R^l)` averages the
//! `l`-th diagonal of a square matrix (`J_R` is the upper-shift matrix).
//! Convolving that sequence with the autocovariances of a row density yields
//! the Toeplitz operator `psi_m`; stacking those per-row outputs gives the
//! block operator `psi_block`, and averaging them back to an `N × N` matrix
//! gives `psi_bar`. Time-domain convolution of exact lag sequences is the
//! default evaluation path; the frequency form exists for cross-checks.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::spectra::{AutocovSeq, EnsembleSpec, SpectralDensity, DEFAULT_QUADRATURE_POINTS};

/// A finitely supported sequence over lags `-half ..= half`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSeq {
    half: usize,
    data: Vec<Complex64>,
}

impl LagSeq {
    pub fn zeros(half: usize) -> Self {
        Self {
            half,
            data: vec![Complex64::new(0.0, 0.0); 2 * half + 1],
        }
    }

    pub fn half(&self) -> usize {
        self.half
    }

    #[inline]
    pub fn get(&self, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.half {
            Complex64::new(0.0, 0.0)
        } else {
            self.data[(k + self.half as i64) as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, k: i64, v: Complex64) {
        debug_assert!(k.unsigned_abs() as usize <= self.half);
        self.data[(k + self.half as i64) as usize] = v;
    }

    /// Sequence of the transposed matrix: lag reversal.
    pub fn reversed(&self) -> Self {
        let mut data = self.data.clone();
        data.reverse();
        Self {
            half: self.half,
            data,
        }
    }

    /// Pointwise linear combination `(1 - d) * new + d * old`; both inputs
    /// must share the same support.
    pub fn damped(new: &Self, old: &Self, d: f64) -> Self {
        assert_eq!(new.half, old.half);
        let data = new
            .data
            .iter()
            .zip(&old.data)
            .map(|(a, b)| a * (1.0 - d) + b * d)
            .collect();
        Self {
            half: new.half,
            data,
        }
    }

    /// `cur + (cur - prev) * factor` pointwise.
    pub fn extrapolated(cur: &Self, prev: &Self, factor: Complex64) -> Self {
        assert_eq!(cur.half, prev.half);
        let data = cur
            .data
            .iter()
            .zip(&prev.data)
            .map(|(a, b)| a + (a - b) * factor)
            .collect();
        Self {
            half: cur.half,
            data,
        }
    }

    pub fn iter_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `K × K` shift power `J_K^l` (transpose power for negative `l`, zero matrix
/// once `|l| >= K`, consistent with nilpotency).
pub fn shift(k: usize, l: i64) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(k, k);
    if l.unsigned_abs() as usize >= k {
        return m;
    }
    for i in 0..k {
        // J^l has ones where col - row = l, i.e. row - col = -l.
        let j = i as i64 + l;
        if (0..k as i64).contains(&j) {
            m[(i, j as usize)] = Complex64::new(1.0, 0.0);
        }
    }
    m
}

/// `tau(M)(l) = (1/R) tr(M J_R^l)`: the average of the diagonal of `M` with
/// `row - col = l`, normalized by the full dimension `R`. Lags `|l| >= R`
/// give zero.
pub fn tau(m: &DMatrix<Complex64>, l: i64) -> Complex64 {
    let r = m.nrows();
    assert_eq!(r, m.ncols(), "tau expects a square matrix");
    if l.unsigned_abs() as usize >= r {
        return Complex64::new(0.0, 0.0);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    if l >= 0 {
        let l = l as usize;
        for i in l..r {
            acc += m[(i, i - l)];
        }
    } else {
        let l = (-l) as usize;
        for i in 0..r - l {
            acc += m[(i, i + l)];
        }
    }
    acc / r as f64
}

/// All lags of `tau` at once.
pub fn tau_seq(m: &DMatrix<Complex64>) -> LagSeq {
    let r = m.nrows();
    let mut seq = LagSeq::zeros(r - 1);
    for l in -(r as i64 - 1)..=(r as i64 - 1) {
        seq.set(l, tau(m, l));
    }
    seq
}

/// Convolution `(r ⋆ s)(d) = Σ_l r(d - l) s(l)` of an autocovariance sequence
/// with a lag sequence, evaluated for `|d| <= out_half`.
pub fn convolve_autocov(r: &AutocovSeq, s: &LagSeq, out_half: usize) -> LagSeq {
    let mut out = LagSeq::zeros(out_half);
    let sh = s.half() as i64;
    for d in -(out_half as i64)..=(out_half as i64) {
        let mut acc = Complex64::new(0.0, 0.0);
        for l in -sh..=sh {
            let rv = r.get(d - l);
            if rv.re != 0.0 || rv.im != 0.0 {
                acc += rv * s.get(l);
            }
        }
        out.set(d, acc);
    }
    out
}

/// Toeplitz matrix whose `(i, j)` entry is `seq(i - j)`.
pub fn toeplitz_from_seq(seq: &LagSeq, k: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(k, k, |i, j| seq.get(i as i64 - j as i64))
}

/// The Toeplitzification operator of one row: a `K × K` Toeplitz matrix with
/// `(i, j)` entry `Σ_l r_m(i - j - l) tau(M)(l)`.
pub fn psi_m(model: &SpectralDensity, mtx: &DMatrix<Complex64>, k: usize) -> DMatrix<Complex64> {
    let r_dim = mtx.nrows();
    let max_lag = k + r_dim;
    let r = AutocovSeq::of(model, max_lag, DEFAULT_QUADRATURE_POINTS);
    psi_m_seq(&r, mtx, k)
}

/// Same as [`psi_m`] with a precomputed autocovariance sequence.
pub fn psi_m_seq(r: &AutocovSeq, mtx: &DMatrix<Complex64>, k: usize) -> DMatrix<Complex64> {
    let taus = tau_seq(mtx);
    let conv = convolve_autocov(r, &taus, k.saturating_sub(1));
    toeplitz_from_seq(&conv, k)
}

/// Frequency-domain evaluation of [`psi_m`] by quadrature of
/// `∫ S(ν) a_R(ν)^H M a_R(ν) d_K(ν) d_K(ν)^H dν` on `grid_points` nodes.
pub fn psi_m_freq(
    model: &SpectralDensity,
    mtx: &DMatrix<Complex64>,
    k: usize,
    grid_points: usize,
) -> DMatrix<Complex64> {
    let r_dim = mtx.nrows();
    assert_eq!(r_dim, mtx.ncols(), "psi_m_freq expects a square matrix");
    assert!(
        grid_points >= 2 * (r_dim + k),
        "grid too coarse: need at least 2 (R + K) = {} points",
        2 * (r_dim + k)
    );
    let tau = std::f64::consts::TAU;
    // Accumulate per lag; the integrand's (i, j) dependence is through
    // e^{2πiν(i - j)} only.
    let mut lags = LagSeq::zeros(k.saturating_sub(1));
    let mut d_r = vec![Complex64::new(0.0, 0.0); r_dim];
    for q in 0..grid_points {
        let nu = q as f64 / grid_points as f64;
        for (p, slot) in d_r.iter_mut().enumerate() {
            let phase = tau * nu * p as f64;
            *slot = Complex64::new(phase.cos(), phase.sin());
        }
        // a_R^H M a_R = (1/R) d_R^H M d_R
        let mut quad = Complex64::new(0.0, 0.0);
        for i in 0..r_dim {
            for j in 0..r_dim {
                quad += d_r[i].conj() * mtx[(i, j)] * d_r[j];
            }
        }
        quad /= r_dim as f64;
        let weight = model.eval(nu) * quad / grid_points as f64;
        for d in -(k as i64 - 1)..=(k as i64 - 1) {
            let phase = tau * nu * d as f64;
            let cur = lags.get(d);
            lags.set(d, cur + weight * Complex64::new(phase.cos(), phase.sin()));
        }
    }
    toeplitz_from_seq(&lags, k)
}

/// Block-diagonal carrier for operator outputs and solver state: `M` square
/// blocks of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    block_dim: usize,
    blocks: Vec<DMatrix<Complex64>>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DMatrix<Complex64>>) -> Self {
        assert!(!blocks.is_empty(), "need at least one block");
        let block_dim = blocks[0].nrows();
        for b in &blocks {
            assert_eq!(b.nrows(), block_dim, "blocks must share one dimension");
            assert_eq!(b.ncols(), block_dim, "blocks must be square");
        }
        Self { block_dim, blocks }
    }

    pub fn identity(m: usize, l: usize) -> Self {
        Self::new(vec![DMatrix::identity(l, l); m])
    }

    pub fn zeros(m: usize, l: usize) -> Self {
        Self::new(vec![DMatrix::zeros(l, l); m])
    }

    /// Extract the diagonal blocks of a full `ML × ML` matrix; off-diagonal
    /// blocks are discarded.
    pub fn from_full(a: &DMatrix<Complex64>, m: usize, l: usize) -> Self {
        assert_eq!(a.nrows(), m * l);
        assert_eq!(a.ncols(), m * l);
        let blocks = (0..m)
            .map(|bm| a.view((bm * l, bm * l), (l, l)).into_owned())
            .collect();
        Self::new(blocks)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Full dimension `M * L`.
    pub fn dim(&self) -> usize {
        self.blocks.len() * self.block_dim
    }

    pub fn block(&self, m: usize) -> &DMatrix<Complex64> {
        &self.blocks[m]
    }

    pub fn blocks(&self) -> &[DMatrix<Complex64>] {
        &self.blocks
    }

    /// Dense `ML × ML` matrix with the blocks on the diagonal; zero elsewhere.
    pub fn materialize(&self) -> DMatrix<Complex64> {
        let (m, l) = (self.blocks.len(), self.block_dim);
        let mut out = DMatrix::zeros(m * l, m * l);
        for (bm, b) in self.blocks.iter().enumerate() {
            out.view_mut((bm * l, bm * l), (l, l)).copy_from(b);
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        self.blocks.iter().map(|b| b.trace()).sum()
    }

    pub fn map_blocks(&self, f: impl Fn(&DMatrix<Complex64>) -> DMatrix<Complex64>) -> Self {
        Self::new(self.blocks.iter().map(f).collect())
    }

    /// Blockwise `(1 - d) * new + d * old`.
    pub fn damped(new: &Self, old: &Self, d: f64) -> Self {
        assert_eq!(new.block_dim, old.block_dim);
        assert_eq!(new.blocks.len(), old.blocks.len());
        Self::new(
            new.blocks
                .iter()
                .zip(&old.blocks)
                .map(|(a, b)| a * Complex64::new(1.0 - d, 0.0) + b * Complex64::new(d, 0.0))
                .collect(),
        )
    }

    /// Largest blockwise spectral norm of the difference; this equals the
    /// spectral norm of the materialized difference.
    pub fn spectral_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.blocks.len(), other.blocks.len());
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| crate::linalg::spectral_norm(&(a - b)))
            .fold(0.0, f64::max)
    }

    /// Spectral norm of the materialized matrix (max over blocks).
    pub fn spectral_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(crate::linalg::spectral_norm)
            .fold(0.0, f64::max)
    }
}

/// The block operator: an `ML × ML` block-diagonal matrix whose `m`-th block
/// is `psi_m(density_m, B, L)` for an `N × N` input `B`.
pub fn psi_block(spec: &EnsembleSpec, b: &DMatrix<Complex64>) -> BlockDiagonal {
    assert_eq!(b.nrows(), spec.n(), "psi_block expects an N x N input");
    assert_eq!(b.ncols(), spec.n(), "psi_block expects an N x N input");
    let taus = tau_seq(b);
    psi_block_from_tau(&spec.autocov_seqs(), &taus, spec.l())
}

/// Block operator from a precomputed `tau` sequence of the `N × N` input.
pub fn psi_block_from_tau(r_seqs: &[AutocovSeq], taus: &LagSeq, l: usize) -> BlockDiagonal {
    let blocks = r_seqs
        .iter()
        .map(|r| {
            let conv = convolve_autocov(r, taus, l.saturating_sub(1));
            toeplitz_from_seq(&conv, l)
        })
        .collect();
    BlockDiagonal::new(blocks)
}

/// The averaging operator: `psi_bar(A) = (1/M) Σ_m psi_m(density_m, A^{m,m}, N)`,
/// an `N × N` Toeplitz matrix. Only the diagonal blocks of `A` enter.
pub fn psi_bar(spec: &EnsembleSpec, a: &BlockDiagonal) -> DMatrix<Complex64> {
    let seq = psi_bar_seq(&spec.autocov_seqs(), a, spec.n());
    toeplitz_from_seq(&seq, spec.n())
}

/// Full-matrix variant of [`psi_bar`]; off-diagonal blocks are ignored,
/// matching the definition.
pub fn psi_bar_full(spec: &EnsembleSpec, a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let bd = BlockDiagonal::from_full(a, spec.m(), spec.l());
    psi_bar(spec, &bd)
}

/// Lag sequence of `psi_bar(A)` (entry `(i, j)` depends on `i - j` only).
pub fn psi_bar_seq(r_seqs: &[AutocovSeq], a: &BlockDiagonal, n: usize) -> LagSeq {
    assert_eq!(r_seqs.len(), a.block_count());
    let m = a.block_count() as f64;
    let mut out = LagSeq::zeros(n - 1);
    for (r, block) in r_seqs.iter().zip(a.blocks()) {
        let taus = tau_seq(block);
        let conv = convolve_autocov(r, &taus, n - 1);
        for d in -(n as i64 - 1)..=(n as i64 - 1) {
            let cur = out.get(d);
            out.set(d, cur + conv.get(d) / m);
        }
    }
    out
}
