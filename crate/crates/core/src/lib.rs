//! Spectral analysis of large block-Hankel Gram matrices.
//!
//! The crate samples stacked Hankel matrices built from correlated complex
//! Gaussian sequences, implements the Toeplitzification operators that govern
//! their limiting spectra, solves the coupled canonical fixed-point equations
//! for the deterministic equivalent of the resolvent, and provides a Monte
//! Carlo harness for convergence-rate studies together with a
//! log-determinant independence statistic.

pub mod config;
pub mod equivalents;
pub mod harness;
pub mod indeptest;
pub mod io;
pub mod linalg;
pub mod resolvent;
pub mod sampler;
pub mod spectra;
pub mod toeplitz_inverse;
pub mod toeplitz_ops;

pub use num_complex::Complex64;

pub use equivalents::{SolveOptions, SolverStart, StieltjesPair};
pub use spectra::{EnsembleSpec, SpectralDensity};
pub use toeplitz_ops::BlockDiagonal;
