//! File emission and ingestion: atomic CSV writers, the binary sample
//! container, and the convergence-report schema.
//!
//! All writers go through a temp-file-then-rename so a crashed run never
//! leaves a half-written artifact behind. Floats are formatted with Rust's
//! shortest round-trip `Display`, which keeps outputs byte-deterministic.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::harness::RateReport;

/// Magic bytes of the binary sample container.
pub const W_MAGIC: [u8; 4] = *b"BHNK";
/// Current container version.
pub const W_VERSION: u32 = 1;

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let mut tmp = dir.to_path_buf();
    tmp.push(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Header of the binary sample container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WHeader {
    pub m: u64,
    pub l: u64,
    pub n: u64,
    pub seed: u64,
}

/// Serialize an `ML × N` matrix: magic, version, `M`, `L`, `N`, seed, then
/// row-major `(re, im)` little-endian `f64` pairs.
pub fn write_w_binary(path: &Path, header: &WHeader, w: &DMatrix<Complex64>) -> io::Result<()> {
    let ml = (header.m * header.l) as usize;
    assert_eq!(w.nrows(), ml);
    assert_eq!(w.ncols(), header.n as usize);
    let mut buf = Vec::with_capacity(4 + 4 + 32 + 16 * ml * w.ncols());
    buf.extend_from_slice(&W_MAGIC);
    buf.extend_from_slice(&W_VERSION.to_le_bytes());
    for v in [header.m, header.l, header.n, header.seed] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            buf.extend_from_slice(&w[(i, j)].re.to_le_bytes());
            buf.extend_from_slice(&w[(i, j)].im.to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

pub fn read_w_binary(path: &Path) -> io::Result<(WHeader, DMatrix<Complex64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    if bytes.len() < 40 || bytes[..4] != W_MAGIC {
        return Err(bad("not a sample container (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != W_VERSION {
        return Err(bad(&format!("unsupported container version {version}")));
    }
    let mut at = 8usize;
    let mut next_u64 = || {
        let v = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        v
    };
    let header = WHeader {
        m: next_u64(),
        l: next_u64(),
        n: next_u64(),
        seed: next_u64(),
    };
    let ml = (header.m * header.l) as usize;
    let n = header.n as usize;
    let expected = 40 + 16 * ml * n;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "container payload has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut w = DMatrix::zeros(ml, n);
    let mut off = 40usize;
    for i in 0..ml {
        for j in 0..n {
            let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
            w[(i, j)] = Complex64::new(re, im);
            off += 16;
        }
    }
    Ok((header, w))
}

/// Matrix as `row,col,re,im` CSV (the fixture format used in tests).
pub fn matrix_csv(w: &DMatrix<Complex64>) -> String {
    let mut out = String::from("row,col,re,im\n");
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            out.push_str(&format!("{},{},{},{}\n", i, j, w[(i, j)].re, w[(i, j)].im));
        }
    }
    out
}

pub fn eigenvalues_csv(eigs: &[f64]) -> String {
    let mut out = String::from("eigenvalue\n");
    for e in eigs {
        out.push_str(&format!("{e}\n"));
    }
    out
}

/// Histogram of eigenvalues over `bins` equal-width bins.
pub fn histogram_csv(eigs: &[f64], bins: usize) -> String {
    assert!(bins >= 1 && !eigs.is_empty());
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 1.0 + 1e-12;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &e in eigs {
        let idx = (((e - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let total = eigs.len() as f64;
    let mut out = String::from("bin_left,bin_right,count,density\n");
    for (b, &count) in counts.iter().enumerate() {
        let left = lo + b as f64 * width;
        let right = left + width;
        let density = count as f64 / (total * width);
        out.push_str(&format!("{left},{right},{count},{density}\n"));
    }
    out
}

/// Rows of `solve` output: `(z, t, iterations, residual)`.
pub fn solve_csv(rows: &[(Complex64, Complex64, usize, f64)]) -> String {
    let mut out = String::from("re_z,im_z,re_t,im_t,iterations,residual\n");
    for (z, t, iterations, residual) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            z.re, z.im, t.re, t.im, iterations, residual
        ));
    }
    out
}

pub fn density_csv(x: &[f64], f: &[f64]) -> String {
    let mut out = String::from("x,f\n");
    for (xi, fi) in x.iter().zip(f) {
        out.push_str(&format!("{xi},{fi}\n"));
    }
    out
}

/// RateReport rows in field order, with the slope summary as a final
/// commented line.
pub fn rate_report_csv(report: &RateReport) -> String {
    let mut out = String::from("M,L,N,re_z,im_z,statistic,trials,estimate,stderr,seed\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.m, r.l, r.n, r.z.re, r.z.im, r.statistic, r.trials, r.estimate, r.stderr, r.seed
        ));
    }
    if let Some(fit) = &report.slope {
        out.push_str(&format!(
            "# slope={},stderr={},ci_low={},ci_high={}\n",
            fit.slope, fit.stderr, fit.ci_low, fit.ci_high
        ));
    }
    out
}
