//! The canonical fixed-point system for the deterministic equivalent
//! `(T(z), T̃(z))` and everything built on top of it: the scalar transform
//! `t_N(z)`, the auxiliary pair `(R(z), R̃(z))` from an estimated resolvent
//! mean, the Monte Carlo error matrix `Δ(z)`, class-S property reports and
//! Stieltjes inversion of `t_N` to a density.
//!
//! The iteration updates `T̃` from `T` and then `T` from `T̃`:
//!
//! ```text
//! T̃ = -(1/z) (I_N  + c_N Ψ̄^T(T))^{-1}
//! T  = -(1/z) (I_ML + Ψ(T̃^T))^{-1}
//! ```
//!
//! Everything the maps consume are lag sequences: `Ψ̄(T)` is Toeplitz, so the
//! `N × N` inversion runs through the `O(N²)` Toeplitz engine, and `T` stays
//! block diagonal with `L × L` blocks throughout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{delta_z, imaginary_part, min_eig_hermitian, spectral_norm};
use crate::resolvent;
use crate::sampler::EnsembleSampler;
use crate::spectra::{AutocovSeq, EnsembleSpec};
use crate::toeplitz_inverse::{self, ToeplitzInverseError};
use crate::toeplitz_ops::{
    convolve_autocov, psi_bar_seq, tau_seq, toeplitz_from_seq, BlockDiagonal, LagSeq,
};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("z = {z} is too close to the positive real axis")]
    InvalidPoint { z: Complex64 },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("fixed-point iteration did not reach tolerance after {iterations} sweeps (last residual {last_residual:.3e}); retry with more damping or a larger budget")]
    MaxIterExceeded { iterations: usize, last_residual: f64 },
    #[error("non-finite intermediate at sweep {iteration}")]
    NonFinite { iteration: usize },
    #[error("accelerated iteration left the Stieltjes branch")]
    WrongBranch,
    #[error(transparent)]
    Toeplitz(#[from] ToeplitzInverseError),
    #[error("L x L block {block} of the update is numerically singular")]
    BlockSingular { block: usize },
    #[error("inner matrix is numerically singular (condition estimate {cond:.3e} > 1e12); the resolvent-mean estimate looks corrupted")]
    IllConditioned { cond: f64 },
    #[error("sampling failed: {0}")]
    Sampler(#[from] crate::sampler::SamplerError),
    #[error("resolvent failed: {0}")]
    Resolvent(#[from] resolvent::ResolventError),
}

/// Initial iterate of the fixed-point solver.
#[derive(Debug, Clone, Default)]
pub enum SolverStart {
    /// `T^(0) = (Ψ(I_N) - z I)^{-1}`.
    #[default]
    PsiIdentity,
    /// `T^(0) = -(1/z) I`.
    ZeroCoupling,
    /// Resume from a previously solved `T` (nearby `z`).
    Warm(BlockDiagonal),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Damping `d` of the update `X <- (1-d) X_new + d X_old`. Escalates
    /// automatically through 0.5 and 0.8 when the residual oscillates.
    pub damping: f64,
    pub start: SolverStart,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            damping: 0.0,
            start: SolverStart::PsiIdentity,
        }
    }
}

/// Solver output at one point `z`.
#[derive(Debug, Clone)]
pub struct StieltjesPair {
    pub z: Complex64,
    /// `M` diagonal blocks of size `L × L`.
    pub t: BlockDiagonal,
    pub t_tilde: DMatrix<Complex64>,
    pub iterations: usize,
    /// Plug-back residual of the canonical system: spectral norm on the
    /// block side, Frobenius (an upper bound on spectral) on the `N × N`
    /// side.
    pub final_residual: f64,
}

impl StieltjesPair {
    /// `t_N(z) = (1/ML) tr T(z)`.
    pub fn t_scalar(&self) -> Complex64 {
        self.t.trace() / self.t.dim() as f64
    }
}

/// `t_N(z) = (1/ML) tr T(z)`.
pub fn t_scalar(pair: &StieltjesPair) -> Complex64 {
    pair.t_scalar()
}

/// Auxiliary deterministic pair built from an estimated resolvent mean.
#[derive(Debug, Clone)]
pub struct AuxiliaryPair {
    pub r: BlockDiagonal,
    pub r_tilde: DMatrix<Complex64>,
}

/// Shared evaluation of the two half-maps of the canonical system.
struct Engine<'s> {
    spec: &'s EnsembleSpec,
    z: Complex64,
    r_seqs: Vec<AutocovSeq>,
}

impl<'s> Engine<'s> {
    fn new(spec: &'s EnsembleSpec, z: Complex64) -> Self {
        Self {
            spec,
            z,
            r_seqs: spec.autocov_seqs(),
        }
    }

    /// Lags of `I_N + c_N Ψ̄^T(X)` for block-diagonal `X`.
    fn co_matrix_lags(&self, x: &BlockDiagonal) -> LagSeq {
        let n = self.spec.n();
        let c = self.spec.c_n();
        let p = psi_bar_seq(&self.r_seqs, x, n);
        // transpose of a Toeplitz matrix reverses its lag sequence
        let mut a = p.reversed();
        for d in -(n as i64 - 1)..=(n as i64 - 1) {
            let v = a.get(d) * c;
            a.set(d, if d == 0 { v + 1.0 } else { v });
        }
        a
    }

    /// `X ↦ -(1/z)(I_N + c_N Ψ̄^T(X))^{-1}` together with the lag sequence
    /// `τ(out^T)` the block update consumes.
    fn co_update(&self, x: &BlockDiagonal) -> Result<(DMatrix<Complex64>, LagSeq), SolveError> {
        let n = self.spec.n();
        let a = self.co_matrix_lags(x);
        let inv = toeplitz_inverse::invert(&a, n)?;
        let scale = -1.0 / self.z;
        let out = inv.matrix * scale;
        let u = tau_seq(&out).reversed();
        Ok((out, u))
    }

    /// `u = τ(Y^T) ↦ -(1/z)(I_ML + Ψ(Y^T))^{-1}`, inverted blockwise.
    fn t_update(&self, u: &LagSeq) -> Result<BlockDiagonal, SolveError> {
        let l = self.spec.l();
        let scale = -1.0 / self.z;
        let mut blocks = Vec::with_capacity(self.spec.m());
        for (m, r) in self.r_seqs.iter().enumerate() {
            let conv = convolve_autocov(r, u, l.saturating_sub(1));
            let mut g = toeplitz_from_seq(&conv, l);
            for i in 0..l {
                g[(i, i)] += 1.0;
            }
            let inv = g
                .try_inverse()
                .ok_or(SolveError::BlockSingular { block: m })?;
            blocks.push(inv * scale);
        }
        Ok(BlockDiagonal::new(blocks))
    }

    fn paper_start(&self) -> Result<BlockDiagonal, SolveError> {
        // (Ψ(I_N) - z I)^{-1}: block m is the Toeplitz autocovariance matrix
        // of row m, shifted by -z.
        let l = self.spec.l();
        let mut blocks = Vec::with_capacity(self.spec.m());
        for (m, r) in self.r_seqs.iter().enumerate() {
            let mut g = DMatrix::from_fn(l, l, |i, j| r.get(i as i64 - j as i64));
            for i in 0..l {
                g[(i, i)] -= self.z;
            }
            let inv = g
                .try_inverse()
                .ok_or(SolveError::BlockSingular { block: m })?;
            blocks.push(inv);
        }
        Ok(BlockDiagonal::new(blocks))
    }
}

fn validate_options(opts: &SolveOptions) -> Result<(), SolveError> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(SolveError::InvalidOptions(format!(
            "tol must be positive, got {}",
            opts.tol
        )));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(SolveError::InvalidOptions(format!(
            "damping must lie in [0, 1), got {}",
            opts.damping
        )));
    }
    if opts.max_iter == 0 {
        return Err(SolveError::InvalidOptions("max_iter must be >= 1".into()));
    }
    Ok(())
}

fn check_z(z: Complex64) -> Result<(), SolveError> {
    if delta_z(z) < resolvent::MIN_DELTA_Z {
        Err(SolveError::InvalidPoint { z })
    } else {
        Ok(())
    }
}

/// Sign test that the iterate sits on the class-S branch: for `Im z != 0`
/// the transforms map the half-plane to itself; on the negative real axis
/// they are positive. `margin` tolerates round-off.
fn on_stieltjes_branch(z: Complex64, t_trace: Complex64, tt_trace: Complex64, margin: f64) -> bool {
    if z.im != 0.0 {
        let s = z.im.signum();
        s * t_trace.im >= -margin && s * tt_trace.im >= -margin
    } else {
        t_trace.re >= -margin && tt_trace.re >= -margin
    }
}

/// Solve the canonical system at `z` to the requested plug-back residual.
pub fn solve_canonical(
    spec: &EnsembleSpec,
    z: Complex64,
    opts: &SolveOptions,
) -> Result<StieltjesPair, SolveError> {
    check_z(z)?;
    validate_options(opts)?;
    match solve_core(spec, z, opts, true) {
        Ok(pair) => Ok(pair),
        Err(SolveError::WrongBranch) => {
            // The accelerated path crossed to the conjugate solution; redo
            // the plain iteration, which preserves the class by construction.
            let mut plain = opts.clone();
            plain.start = SolverStart::PsiIdentity;
            solve_core(spec, z, &plain, false)
        }
        Err(e) => Err(e),
    }
}

fn solve_core(
    spec: &EnsembleSpec,
    z: Complex64,
    opts: &SolveOptions,
    allow_extrapolation: bool,
) -> Result<StieltjesPair, SolveError> {
    let eng = Engine::new(spec, z);

    let mut t = match &opts.start {
        SolverStart::PsiIdentity => eng.paper_start()?,
        SolverStart::ZeroCoupling => {
            let scale = -1.0 / z;
            BlockDiagonal::identity(spec.m(), spec.l()).map_blocks(|b| b * scale)
        }
        SolverStart::Warm(bd) => {
            assert_eq!(bd.block_count(), spec.m(), "warm start has wrong block count");
            assert_eq!(bd.block_dim(), spec.l(), "warm start has wrong block size");
            bd.clone()
        }
    };
    let (mut tt, mut u) = eng.co_update(&t)?;

    let mut damping = opts.damping;
    let mut last_change = f64::INFINITY;
    let mut last_ratio = f64::NAN;
    let mut increases = 0usize;
    // Geometric extrapolation of the linearly converging tail: once the
    // change ratio q stabilizes, jump by the remaining geometric series
    // (X - X_prev) * q / (1 - q). Convergence is still gated by the
    // plug-back residual and the branch checks, so a bad jump only costs
    // sweeps.
    let mut extrapolation_cooldown = 5usize;
    let mut extrapolation_enabled = allow_extrapolation;
    let mut did_extrapolate = false;
    let warm_started = matches!(opts.start, SolverStart::Warm(_));
    let mut snapshot: Option<(BlockDiagonal, DMatrix<Complex64>, LagSeq)> = None;

    for iter in 1..=opts.max_iter {
        let step = (|| -> Result<_, SolveError> {
            let t_raw = eng.t_update(&u)?;
            let t_new = if damping > 0.0 {
                BlockDiagonal::damped(&t_raw, &t, damping)
            } else {
                t_raw
            };
            let (tt_raw, u_raw) = eng.co_update(&t_new)?;
            let (tt_new, u_new) = if damping > 0.0 {
                let tt_mixed = &tt_raw * Complex64::new(1.0 - damping, 0.0)
                    + &tt * Complex64::new(damping, 0.0);
                (tt_mixed, LagSeq::damped(&u_raw, &u, damping))
            } else {
                (tt_raw, u_raw)
            };
            Ok((t_new, tt_new, u_new))
        })();
        let (t_new, tt_new, u_new) = match step {
            Ok(v) => v,
            Err(e) => {
                // An overshooting extrapolation can leave the state outside
                // the invertible region; back out once and keep sweeping.
                if let Some((ts, tts, us)) = snapshot.take() {
                    extrapolation_enabled = false;
                    t = ts;
                    tt = tts;
                    u = us;
                    last_change = f64::INFINITY;
                    last_ratio = f64::NAN;
                    continue;
                }
                return Err(e);
            }
        };
        snapshot = None;

        let finite = u_new.iter_all_finite()
            && t_new.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(SolveError::NonFinite { iteration: iter });
        }

        let change_t = t_new.spectral_distance(&t);
        let mut change_tt = 0.0f64;
        for (a, b) in tt_new.iter().zip(tt.iter()) {
            change_tt += (a - b).norm_sqr();
        }
        let change_tt = change_tt.sqrt();
        let change = change_t.max(change_tt);
        let ratio = change / last_change;

        let t_prev = std::mem::replace(&mut t, t_new);
        let tt_prev = std::mem::replace(&mut tt, tt_new);
        let u_prev = std::mem::replace(&mut u, u_new);

        if change <= opts.tol {
            // Plug the candidate pair back into both equations.
            let t_back = eng.t_update(&u)?;
            let res_t = t_back.spectral_distance(&t);
            let (tt_back, u_back) = eng.co_update(&t)?;
            let mut res_tt = 0.0f64;
            for (a, b) in tt_back.iter().zip(tt.iter()) {
                res_tt += (a - b).norm_sqr();
            }
            let final_residual = res_t.max(res_tt.sqrt());
            if final_residual <= opts.tol {
                let t_trace = t.trace() / t.dim() as f64;
                let tt_trace = u.get(0);
                let mut class_ok = on_stieltjes_branch(z, t_trace, tt_trace, 1e-9);
                if class_ok && z.im != 0.0 {
                    let s = Complex64::new(z.im.signum(), 0.0);
                    for b in t.blocks() {
                        let margin = 1e-9 * (1.0 + b.norm());
                        if min_eig_hermitian(&(imaginary_part(b) * s)) < -margin {
                            class_ok = false;
                            break;
                        }
                    }
                }
                if !class_ok && (did_extrapolate || warm_started) {
                    return Err(SolveError::WrongBranch);
                }
                return Ok(StieltjesPair {
                    z,
                    t,
                    t_tilde: tt,
                    iterations: iter,
                    final_residual,
                });
            }
            // Not converged after all: adopt the fresh co-state and go on.
            tt = tt_back;
            u = u_back;
            last_change = f64::INFINITY;
            last_ratio = f64::NAN;
            continue;
        }

        if change > last_change * (1.0 + 1e-12) {
            increases += 1;
            if increases >= 3 {
                increases = 0;
                if damping < 0.5 {
                    damping = 0.5;
                } else if damping < 0.8 {
                    damping = 0.8;
                }
            }
        }

        extrapolation_cooldown = extrapolation_cooldown.saturating_sub(1);
        let ratio_stable = last_ratio.is_finite() && (ratio - last_ratio).abs() <= 0.02 * ratio;
        if extrapolation_enabled
            && damping == 0.0
            && extrapolation_cooldown == 0
            && change > 100.0 * opts.tol
            && (0.5..0.9995).contains(&ratio)
            && ratio_stable
        {
            let factor = Complex64::new((ratio / (1.0 - ratio)).min(2000.0), 0.0);
            snapshot = Some((t.clone(), tt.clone(), u.clone()));
            t = BlockDiagonal::new(
                t.blocks()
                    .iter()
                    .zip(t_prev.blocks())
                    .map(|(cur, prev)| cur + (cur - prev) * factor)
                    .collect(),
            );
            let mut tt_next = tt.clone();
            for ((slot, cur), prev) in tt_next.iter_mut().zip(tt.iter()).zip(tt_prev.iter()) {
                *slot = cur + (cur - prev) * factor;
            }
            tt = tt_next;
            u = LagSeq::extrapolated(&u, &u_prev, factor);
            extrapolation_cooldown = 5;
            last_change = f64::INFINITY;
            last_ratio = f64::NAN;
            continue;
        }

        last_change = change;
        last_ratio = ratio;
    }
    Err(SolveError::MaxIterExceeded {
        iterations: opts.max_iter,
        last_residual: last_change,
    })
}

/// Build `(R(z), R̃(z))` from an estimated mean-resolvent block diagonal:
/// `R̃ = -(1/z)(I_N + c_N Ψ̄^T(EQ))^{-1}`, `R = -(1/z)(I_ML + Ψ(R̃^T))^{-1}`.
pub fn deterministic_r(
    spec: &EnsembleSpec,
    z: Complex64,
    eq_blocks: &BlockDiagonal,
) -> Result<AuxiliaryPair, SolveError> {
    check_z(z)?;
    assert_eq!(eq_blocks.block_count(), spec.m());
    assert_eq!(eq_blocks.block_dim(), spec.l());
    let eng = Engine::new(spec, z);
    let a = eng.co_matrix_lags(eq_blocks);
    let n = spec.n();
    let inv = toeplitz_inverse::invert(&a, n)?;
    // Condition estimate through 1-norms; a corrupted EQ estimate shows up
    // as near-singularity here.
    let a_norm: f64 = (-(n as i64 - 1)..=(n as i64 - 1))
        .map(|k| a.get(k).norm())
        .sum();
    let inv_norm = (0..n)
        .map(|j| (0..n).map(|i| inv.matrix[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let cond = a_norm * inv_norm;
    if cond > 1e12 {
        return Err(SolveError::IllConditioned { cond });
    }
    let r_tilde = inv.matrix * (-1.0 / z);
    let u = tau_seq(&r_tilde).reversed();
    let r = eng.t_update(&u)?;
    Ok(AuxiliaryPair { r, r_tilde })
}

/// Monte Carlo estimate of the error matrix `Δ(z) = E[Q(z)] - R(z)`
/// restricted to its diagonal blocks.
#[derive(Debug, Clone)]
pub struct DeltaEstimate {
    /// Averaged resolvent diagonal blocks over the trials.
    pub eq_blocks: BlockDiagonal,
    pub aux: AuxiliaryPair,
    pub delta_blocks: BlockDiagonal,
    /// `(1/ML) tr(A Δ)` for the supplied `A` (its diagonal blocks).
    pub trace_vs_a: Complex64,
    /// Monte Carlo standard error of the `E Q`-side trace component.
    pub trace_stderr: f64,
    pub trials: usize,
}

pub fn delta_estimate(
    spec: &EnsembleSpec,
    z: Complex64,
    trials: usize,
    seed: u64,
    a: &DMatrix<Complex64>,
) -> Result<DeltaEstimate, SolveError> {
    check_z(z)?;
    if trials < 100 {
        return Err(SolveError::InvalidOptions(format!(
            "delta_estimate needs at least 100 trials, got {trials}"
        )));
    }
    let (m, l) = (spec.m(), spec.l());
    let ml = spec.ml();
    assert_eq!(a.nrows(), ml);
    assert_eq!(a.ncols(), ml);
    let a_bd = BlockDiagonal::from_full(a, m, l);
    let sampler = EnsembleSampler::new(spec)?;

    let per_trial: Vec<(BlockDiagonal, Complex64)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(BlockDiagonal, Complex64), SolveError> {
            let sample = sampler.draw(seed, trial);
            let q = resolvent::resolvent(&sample.w, z)?;
            let q_bd = BlockDiagonal::from_full(&q, m, l);
            let mut s = Complex64::new(0.0, 0.0);
            for (ab, qb) in a_bd.blocks().iter().zip(q_bd.blocks()) {
                s += (ab * qb).trace();
            }
            Ok((q_bd, s / ml as f64))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // Sequential reduction in trial order keeps results bitwise reproducible.
    let mut eq_blocks = BlockDiagonal::zeros(m, l);
    let mut traces = Vec::with_capacity(trials);
    for (q_bd, s) in &per_trial {
        eq_blocks = BlockDiagonal::new(
            eq_blocks
                .blocks()
                .iter()
                .zip(q_bd.blocks())
                .map(|(acc, b)| acc + b)
                .collect(),
        );
        traces.push(*s);
    }
    let scale = Complex64::new(1.0 / trials as f64, 0.0);
    eq_blocks = eq_blocks.map_blocks(|b| b * scale);

    let mean: Complex64 = traces.iter().sum::<Complex64>() * scale;
    let var: f64 = traces
        .iter()
        .map(|s| (s - mean).norm_sqr())
        .sum::<f64>()
        / (trials as f64 - 1.0);
    let trace_stderr = (var / trials as f64).sqrt();

    let aux = deterministic_r(spec, z, &eq_blocks)?;
    let delta_blocks = BlockDiagonal::new(
        eq_blocks
            .blocks()
            .iter()
            .zip(aux.r.blocks())
            .map(|(e, r)| e - r)
            .collect(),
    );
    let mut r_trace = Complex64::new(0.0, 0.0);
    for (ab, rb) in a_bd.blocks().iter().zip(aux.r.blocks()) {
        r_trace += (ab * rb).trace();
    }
    let trace_vs_a = mean - r_trace / ml as f64;
    Ok(DeltaEstimate {
        eq_blocks,
        aux,
        delta_blocks,
        trace_vs_a,
        trace_stderr,
        trials,
    })
}

/// Per-point margins of the class-S properties along an imaginary-axis grid.
#[derive(Debug, Clone)]
pub struct ClassSRow {
    pub y: f64,
    /// Item (ii): smallest eigenvalue of `Im T(iy)`.
    pub min_eig_im_t: f64,
    /// Item (ii): smallest eigenvalue of `Im(z T(iy))`.
    pub min_eig_im_zt: f64,
    /// Item (iv): `1/δ_z - max(|T|, |T̃|)`; nonnegative when the bound holds.
    pub norm_slack: f64,
    /// Item (iii): `| -iy T(iy) - I |`.
    pub approx_identity_err: f64,
}

#[derive(Debug, Clone)]
pub struct ClassSReport {
    pub rows: Vec<ClassSRow>,
    /// Item (v): Richardson-refined `Re(-iy(1 + iy t(iy)))` at the largest
    /// grid point and twice it.
    pub first_moment_estimate: f64,
    /// `(1/ML) tr Ψ(I_N)`, the model's exact first moment.
    pub psi_identity_trace: f64,
}

/// Solve at each `iy` on the grid and report the class-S margins, plus the
/// first-moment comparison refined at `2 y_max`.
pub fn class_s_check(
    spec: &EnsembleSpec,
    y_grid: &[f64],
    opts: &SolveOptions,
) -> Result<ClassSReport, SolveError> {
    assert!(!y_grid.is_empty());
    assert!(
        y_grid.windows(2).all(|w| w[0] < w[1]) && y_grid[0] > 0.0,
        "y grid must be positive and increasing"
    );
    let mut rows = Vec::with_capacity(y_grid.len());
    let mut warm: Option<BlockDiagonal> = None;
    let est_at = |y: f64, warm: &mut Option<BlockDiagonal>| -> Result<(f64, StieltjesPair), SolveError> {
        let mut o = opts.clone();
        if let Some(t) = warm.take() {
            o.start = SolverStart::Warm(t);
        }
        let z = Complex64::new(0.0, y);
        let pair = solve_canonical(spec, z, &o)?;
        *warm = Some(pair.t.clone());
        let t = pair.t_scalar();
        Ok((y * y * t.re, pair))
    };
    let mut last_estimate = 0.0;
    for &y in y_grid {
        let (est, pair) = est_at(y, &mut warm)?;
        last_estimate = est;
        let z = pair.z;
        let t_full = pair.t.materialize();
        let min_eig_im_t = min_eig_hermitian(&imaginary_part(&t_full));
        let min_eig_im_zt = min_eig_hermitian(&imaginary_part(&(&t_full * z)));
        let bound = 1.0 / delta_z(z);
        let norm_t = pair.t.spectral_norm();
        let norm_tt = spectral_norm(&pair.t_tilde);
        let norm_slack = bound - norm_t.max(norm_tt);
        let approx = spectral_norm(
            &(&t_full * Complex64::new(0.0, -y) - DMatrix::identity(t_full.nrows(), t_full.ncols())),
        );
        rows.push(ClassSRow {
            y,
            min_eig_im_t,
            min_eig_im_zt,
            norm_slack,
            approx_identity_err: approx,
        });
    }
    let y_max = *y_grid.last().unwrap();
    let (est_double, _) = est_at(2.0 * y_max, &mut warm)?;
    let first_moment_estimate = (4.0 * est_double - last_estimate) / 3.0;
    // (1/ML) tr Ψ(I_N) = (1/M) Σ_m r_m(0)
    let psi_identity_trace = spec
        .autocov_seqs()
        .iter()
        .map(|r| r.get(0).re)
        .sum::<f64>()
        / spec.m() as f64;
    Ok(ClassSReport {
        rows,
        first_moment_estimate,
        psi_identity_trace,
    })
}

/// Density values recovered from the solved transform on a real grid.
#[derive(Debug, Clone)]
pub struct DensityResult {
    pub x: Vec<f64>,
    /// `f(x) = Im t_N(x + iε) / π`; `NaN` where the solver failed.
    pub f: Vec<f64>,
    pub converged: Vec<bool>,
    /// Trapezoid mass over the consecutive converged part of the grid.
    pub mass: f64,
}

/// Stieltjes inversion: solve at `x + iε` along the grid (warm-started, with
/// an ε-homotopy into the first point) and return `Im t_N / π`.
pub fn density_from_stieltjes(
    spec: &EnsembleSpec,
    x_grid: &[f64],
    eps: f64,
    tol: f64,
) -> Result<DensityResult, SolveError> {
    if !(1e-4..=1e-1).contains(&eps) {
        return Err(SolveError::InvalidOptions(format!(
            "epsilon must lie in [1e-4, 1e-1], got {eps}"
        )));
    }
    assert!(
        x_grid.windows(2).all(|w| w[0] < w[1]),
        "x grid must be increasing"
    );
    if x_grid.is_empty() {
        return Err(SolveError::InvalidOptions("empty x grid".into()));
    }
    // Near the real axis the contraction degrades like 1/ε.
    let max_iter = ((10_000.0 * (0.01 / eps).max(1.0)) as usize).min(2_000_000);
    let base = SolveOptions {
        tol,
        max_iter,
        damping: 0.0,
        start: SolverStart::PsiIdentity,
    };

    // Homotopy in ε towards the first grid point.
    let mut warm: Option<BlockDiagonal> = None;
    let x0 = x_grid[0];
    let mut e = 0.5f64.max(8.0 * eps);
    loop {
        let mut o = base.clone();
        if let Some(t) = warm.take() {
            o.start = SolverStart::Warm(t);
        }
        match solve_canonical(spec, Complex64::new(x0, e), &o) {
            Ok(pair) => warm = Some(pair.t),
            Err(_) => warm = None, // cold-start downstream
        }
        if e <= eps {
            break;
        }
        e = (e / 2.0).max(eps);
    }

    let mut f = Vec::with_capacity(x_grid.len());
    let mut converged = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let mut o = base.clone();
        if let Some(t) = warm.clone() {
            o.start = SolverStart::Warm(t);
        }
        match solve_canonical(spec, Complex64::new(x, eps), &o) {
            Ok(pair) => {
                f.push(pair.t_scalar().im / std::f64::consts::PI);
                converged.push(true);
                warm = Some(pair.t);
            }
            Err(SolveError::MaxIterExceeded { .. }) | Err(SolveError::NonFinite { .. }) => {
                f.push(f64::NAN);
                converged.push(false);
            }
            Err(e) => return Err(e),
        }
    }
    let mut mass = 0.0;
    for i in 1..x_grid.len() {
        if converged[i] && converged[i - 1] {
            mass += 0.5 * (f[i] + f[i - 1]) * (x_grid[i] - x_grid[i - 1]);
        }
    }
    Ok(DensityResult {
        x: x_grid.to_vec(),
        f,
        converged,
        mass,
    })
}

/// Uniform grid helper: `count` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && hi > lo);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::SpectralDensity;
    use crate::toeplitz_ops::psi_block;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Marchenko-Pastur Stieltjes transform from the quadratic
    /// `c z m^2 + (z + c - 1) m + 1 = 0`, branch fixed by Im m * Im z > 0
    /// (positivity on the negative axis).
    fn mp_stieltjes(z: Complex64, cr: f64) -> Complex64 {
        let a = Complex64::new(cr, 0.0) * z;
        let b = z + Complex64::new(cr - 1.0, 0.0);
        let disc = (b * b - 4.0 * a).sqrt();
        let m1 = (-b + disc) / (2.0 * a);
        let m2 = (-b - disc) / (2.0 * a);
        let pick = |m: Complex64| -> bool {
            if z.im.abs() > 1e-14 {
                m.im * z.im > 0.0
            } else {
                // negative real axis: the transform is real and in (0, -1/z)
                m.im.abs() < 1e-10 && m.re > 0.0 && m.re < -1.0 / z.re + 1e-10
            }
        };
        if pick(m1) {
            m1
        } else {
            m2
        }
    }

    fn white_spec(m: usize, l: usize, n: usize) -> EnsembleSpec {
        EnsembleSpec::uniform(m, l, n, SpectralDensity::white(1.0).unwrap()).unwrap()
    }

    fn mixed_spec(m: usize, l: usize, n: usize) -> EnsembleSpec {
        let densities = (0..m)
            .map(|i| match i % 3 {
                0 => SpectralDensity::white(1.0).unwrap(),
                1 => SpectralDensity::ar1(0.5).unwrap(),
                _ => SpectralDensity::raised_cosine(0.5).unwrap(),
            })
            .collect();
        EnsembleSpec::new(m, l, n, densities).unwrap()
    }

    #[test]
    fn white_case_matches_marchenko_pastur() {
        let spec = white_spec(4, 2, 16); // c = 0.5
        let opts = SolveOptions::default();
        for &z in &[c(1.0, 1.0), c(0.0, 2.0), c(-1.0, 0.0), c(2.5, 0.5)] {
            let pair = solve_canonical(&spec, z, &opts).unwrap();
            let t = pair.t_scalar();
            let mp = mp_stieltjes(z, 0.5);
            assert!(
                (t - mp).norm() <= 1e-8,
                "z = {z}: t = {t}, mp = {mp}"
            );
            assert!(pair.final_residual <= opts.tol);
        }
    }

    #[test]
    fn mp_oracle_is_consistent_with_quadrature() {
        // Independent sanity check of the test oracle itself: integrate the
        // closed-form MP density against 1/(λ - z).
        let cr = 0.5f64;
        let (lo, hi) = ((1.0 - cr.sqrt()).powi(2), (1.0 + cr.sqrt()).powi(2));
        let z = c(0.7, 1.3);
        let q = 200_000;
        let mut acc = c(0.0, 0.0);
        for i in 0..q {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / q as f64;
            let dens = ((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * cr * x);
            acc += dens / (c(x, 0.0) - z) * ((hi - lo) / q as f64);
        }
        let mp = mp_stieltjes(z, cr);
        assert!((acc - mp).norm() < 1e-4, "quadrature {acc} vs root {mp}");
    }

    #[test]
    fn two_starts_agree() {
        let spec = mixed_spec(3, 2, 12);
        let z = c(1.2, 0.8);
        let tol = 1e-11;
        let a = solve_canonical(
            &spec,
            z,
            &SolveOptions {
                tol,
                ..Default::default()
            },
        )
        .unwrap();
        let b = solve_canonical(
            &spec,
            z,
            &SolveOptions {
                tol,
                start: SolverStart::ZeroCoupling,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(a.t.spectral_distance(&b.t) <= 10.0 * tol);
        assert!((&a.t_tilde - &b.t_tilde).norm() <= 10.0 * tol * (spec.n() as f64).sqrt());
    }

    #[test]
    fn conjugate_symmetry() {
        let spec = mixed_spec(3, 2, 12);
        let z = c(0.9, 1.4);
        let opts = SolveOptions::default();
        let plus = solve_canonical(&spec, z, &opts).unwrap();
        let minus = solve_canonical(&spec, z.conj(), &opts).unwrap();
        for (bp, bm) in plus.t.blocks().iter().zip(minus.t.blocks()) {
            assert!(spectral_norm(&(bp.adjoint() - bm)) <= 1e-9);
        }
        assert!((plus.t_tilde.adjoint() - &minus.t_tilde).norm() <= 1e-9);
    }

    #[test]
    fn class_s_norm_bounds_hold() {
        let spec = mixed_spec(4, 3, 24);
        let opts = SolveOptions::default();
        for &z in &[c(1.0, 0.6), c(-2.0, 0.0), c(3.0, 2.0)] {
            let pair = solve_canonical(&spec, z, &opts).unwrap();
            let bound = 1.0 / delta_z(z) + 1e-8;
            assert!(pair.t.spectral_norm() <= bound);
            assert!(spectral_norm(&pair.t_tilde) <= bound);
            if z.im > 0.0 {
                let tm = pair.t.materialize();
                assert!(min_eig_hermitian(&imaginary_part(&tm)) >= -1e-9);
                assert!(min_eig_hermitian(&imaginary_part(&(&tm * z))) >= -1e-9);
            }
        }
    }

    #[test]
    fn solution_satisfies_canonical_equations() {
        use crate::toeplitz_ops::psi_bar;
        let spec = mixed_spec(3, 2, 10);
        let z = c(0.5, 1.0);
        let pair = solve_canonical(&spec, z, &SolveOptions::default()).unwrap();
        // T = -(1/z)(I + Ψ(T̃^T))^{-1}, checked densely.
        let psi = psi_block(&spec, &pair.t_tilde.transpose()).materialize();
        let lhs = (DMatrix::identity(6, 6) + psi).try_inverse().unwrap() * (-1.0 / z);
        assert!(spectral_norm(&(lhs - pair.t.materialize())) <= 1e-9);
        // T̃ = -(1/z)(I + c Ψ̄(T)^T)^{-1}
        let pb = psi_bar(&spec, &pair.t).transpose() * Complex64::new(spec.c_n(), 0.0);
        let lhs2 = (DMatrix::identity(10, 10) + pb).try_inverse().unwrap() * (-1.0 / z);
        assert!(spectral_norm(&(lhs2 - &pair.t_tilde)) <= 1e-9);
    }

    #[test]
    fn t_scalar_trivial_and_sign() {
        let spec = white_spec(2, 2, 8);
        let z = c(0.0, 1.0);
        let pair = solve_canonical(&spec, z, &SolveOptions::default()).unwrap();
        assert!(pair.t_scalar().im > 0.0);
        let zero = StieltjesPair {
            z,
            t: BlockDiagonal::identity(2, 2).map_blocks(|b| b * (-1.0 / z)),
            t_tilde: DMatrix::identity(8, 8) * (-1.0 / z),
            iterations: 0,
            final_residual: 0.0,
        };
        assert!((t_scalar(&zero) - (-1.0 / z)).norm() < 1e-15);
    }

    #[test]
    fn deterministic_r_fixed_point_consistency() {
        let spec = mixed_spec(3, 2, 12);
        let z = c(1.5, 1.0);
        let pair = solve_canonical(&spec, z, &SolveOptions::default()).unwrap();
        let aux = deterministic_r(&spec, z, &pair.t).unwrap();
        assert!(aux.r.spectral_distance(&pair.t) <= 1e-9);
        assert!((&aux.r_tilde - &pair.t_tilde).norm() <= 1e-9);
    }

    #[test]
    fn monotone_tolerance_against_mp() {
        let spec = white_spec(4, 2, 16);
        let z = c(1.0, 1.0);
        let mp = mp_stieltjes(z, 0.5);
        let mut last = f64::INFINITY;
        for &tol in &[1e-6, 1e-8, 1e-10, 1e-12] {
            let pair = solve_canonical(
                &spec,
                z,
                &SolveOptions {
                    tol,
                    ..Default::default()
                },
            )
            .unwrap();
            let err = (pair.t_scalar() - mp).norm();
            assert!(err <= last + 1e-12, "tol {tol}: err {err} > last {last}");
            last = err;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = white_spec(2, 2, 8);
        assert!(matches!(
            solve_canonical(&spec, c(1.0, 0.0), &SolveOptions::default()),
            Err(SolveError::InvalidPoint { .. })
        ));
        assert!(solve_canonical(
            &spec,
            c(0.0, 1.0),
            &SolveOptions {
                damping: 1.0,
                ..Default::default()
            }
        )
        .is_err());
        let err = solve_canonical(
            &spec,
            c(0.0, 1.0),
            &SolveOptions {
                max_iter: 1,
                tol: 1e-14,
                ..Default::default()
            },
        );
        assert!(matches!(err, Err(SolveError::MaxIterExceeded { .. })));
    }

    #[test]
    fn density_white_case_support_and_mass() {
        let spec = white_spec(4, 2, 16); // c = 0.5
        let x = linspace(1e-3, 3.4, 120);
        let out = density_from_stieltjes(&spec, &x, 1e-3, 1e-8).unwrap();
        assert!(out.converged.iter().all(|&b| b));
        // support of MP(1/2) is [(1-sqrt(c))^2, (1+sqrt(c))^2] = [0.0858, 2.914]
        for (i, &xi) in x.iter().enumerate() {
            assert!(out.f[i] >= -1e-9);
            if xi < 0.0858 - 0.05 || xi > 2.914 + 0.05 {
                assert!(out.f[i] < 1e-2, "leakage {} at x = {xi}", out.f[i]);
            }
        }
        assert!((out.mass - 1.0).abs() <= 0.02, "mass = {}", out.mass);
    }

    #[test]
    fn class_s_report_on_grid() {
        let spec = white_spec(4, 2, 16);
        let report = class_s_check(
            &spec,
            &[0.5, 1.0, 5.0, 100.0, 1e4],
            &SolveOptions::default(),
        )
        .unwrap();
        for row in &report.rows {
            assert!(row.min_eig_im_t >= -1e-9);
            assert!(row.min_eig_im_zt >= -1e-9);
            assert!(row.norm_slack >= -1e-8);
        }
        // item (iii): error decreasing along the grid
        for w in report.rows.windows(2) {
            assert!(w[1].approx_identity_err <= w[0].approx_identity_err + 1e-12);
        }
        let last = report.rows.last().unwrap();
        assert!(last.approx_identity_err <= 1e-3);
        // white case: first moment is exactly 1
        assert!((report.first_moment_estimate - report.psi_identity_trace).abs() <= 1e-2);
        assert!((report.psi_identity_trace - 1.0).abs() < 1e-14);
    }
}
