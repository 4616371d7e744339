//! Ensemble configuration files.
//!
//! Flat `key = value` lines with one nesting level for the density list:
//!
//! ```text
//! # dimensions
//! M = 16
//! L = 8
//! N = 256
//!
//! # one line per row, in row order ...
//! density = white sigma2=1.0
//! density = ar1 a=0.5
//! # ... or a single line expanded to all M rows:
//! density = repeat raised-cosine beta=0.5
//! ```
//!
//! Families and parameters: `white sigma2=<f64>`, `ar1 a=<f64>`,
//! `raised-cosine beta=<f64>`, `tabulated file=<path>` (a `nu,value` CSV,
//! resolved relative to the config file). Unknown keys, families or
//! parameters are rejected, never ignored.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::spectra::{EnsembleSpec, SpectraError, SpectralDensity};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing config key `{0}`")]
    MissingKey(&'static str),
    #[error("line {line}: cannot parse `{value}` as {what}")]
    BadValue {
        line: usize,
        value: String,
        what: &'static str,
    },
    #[error("line {line}: unknown density family `{family}`")]
    UnknownFamily { line: usize, family: String },
    #[error("line {line}: family `{family}` does not take parameter `{param}`")]
    UnknownParam {
        line: usize,
        family: String,
        param: String,
    },
    #[error("line {line}: family `{family}` is missing parameter `{param}`")]
    MissingParam {
        line: usize,
        family: &'static str,
        param: &'static str,
    },
    #[error("line {line}: `repeat` must be the only density line")]
    RepeatNotAlone { line: usize },
    #[error("config declares M = {m} but lists {got} density lines (use `repeat` to expand one)")]
    DensityCount { m: usize, got: usize },
    #[error("tabulated file {path}, line {line}: expected `nu,value`")]
    BadTable { path: String, line: usize },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

pub fn parse_ensemble_file(path: &Path) -> Result<EnsembleSpec, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ensemble_str(&text, path.parent())
}

enum DensityLine {
    One(SpectralDensity),
    Repeat(SpectralDensity),
}

pub fn parse_ensemble_str(
    text: &str,
    base_dir: Option<&Path>,
) -> Result<EnsembleSpec, ConfigError> {
    let mut m: Option<usize> = None;
    let mut l: Option<usize> = None;
    let mut n: Option<usize> = None;
    let mut densities: Vec<(usize, DensityLine)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::BadLine { line: line_no })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "M" | "L" | "N" => {
                let slot = match key {
                    "M" => &mut m,
                    "L" => &mut l,
                    _ => &mut n,
                };
                if slot.is_some() {
                    return Err(ConfigError::DuplicateKey {
                        line: line_no,
                        key: key.to_string(),
                    });
                }
                let parsed = value.parse::<usize>().map_err(|_| ConfigError::BadValue {
                    line: line_no,
                    value: value.to_string(),
                    what: "a positive integer",
                })?;
                *slot = Some(parsed);
            }
            "density" => {
                densities.push((line_no, parse_density_line(line_no, value, base_dir)?));
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: other.to_string(),
                })
            }
        }
    }

    let m = m.ok_or(ConfigError::MissingKey("M"))?;
    let l = l.ok_or(ConfigError::MissingKey("L"))?;
    let n = n.ok_or(ConfigError::MissingKey("N"))?;
    if densities.is_empty() {
        return Err(ConfigError::MissingKey("density"));
    }

    let repeat_lines: Vec<usize> = densities
        .iter()
        .filter(|(_, d)| matches!(d, DensityLine::Repeat(_)))
        .map(|(line, _)| *line)
        .collect();
    let rows: Vec<SpectralDensity> = if repeat_lines.is_empty() {
        if densities.len() != m {
            return Err(ConfigError::DensityCount {
                m,
                got: densities.len(),
            });
        }
        densities
            .into_iter()
            .map(|(_, d)| match d {
                DensityLine::One(d) => d,
                DensityLine::Repeat(_) => unreachable!(),
            })
            .collect()
    } else {
        if densities.len() != 1 {
            return Err(ConfigError::RepeatNotAlone {
                line: repeat_lines[0],
            });
        }
        match densities.into_iter().next().unwrap().1 {
            DensityLine::Repeat(d) => vec![d; m],
            DensityLine::One(_) => unreachable!(),
        }
    };
    Ok(EnsembleSpec::new(m, l, n, rows)?)
}

fn parse_density_line(
    line: usize,
    value: &str,
    base_dir: Option<&Path>,
) -> Result<DensityLine, ConfigError> {
    let mut tokens = value.split_whitespace();
    let first = tokens.next().ok_or(ConfigError::BadLine { line })?;
    let (repeat, family) = if first == "repeat" {
        (
            true,
            tokens.next().ok_or(ConfigError::BadLine { line })?,
        )
    } else {
        (false, first)
    };
    let mut params: Vec<(String, String)> = Vec::new();
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or(ConfigError::BadLine { line })?;
        params.push((k.to_string(), v.to_string()));
    }
    let fam_static = family_static(family);
    let get_f64 = |params: &[(String, String)], name: &'static str| -> Result<f64, ConfigError> {
        let (_, v) = params
            .iter()
            .find(|(k, _)| k == name)
            .ok_or(ConfigError::MissingParam {
                line,
                family: fam_static,
                param: name,
            })?;
        v.parse::<f64>().map_err(|_| ConfigError::BadValue {
            line,
            value: v.clone(),
            what: "a real number",
        })
    };
    let reject_unknown = |allowed: &[&str]| -> Result<(), ConfigError> {
        for (k, _) in &params {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownParam {
                    line,
                    family: family.to_string(),
                    param: k.clone(),
                });
            }
        }
        Ok(())
    };
    let density = match family {
        "white" => {
            reject_unknown(&["sigma2"])?;
            SpectralDensity::white(get_f64(&params, "sigma2")?)?
        }
        "ar1" => {
            reject_unknown(&["a"])?;
            SpectralDensity::ar1(get_f64(&params, "a")?)?
        }
        "raised-cosine" => {
            reject_unknown(&["beta"])?;
            SpectralDensity::raised_cosine(get_f64(&params, "beta")?)?
        }
        "tabulated" => {
            reject_unknown(&["file"])?;
            let (_, file) = params
                .iter()
                .find(|(k, _)| k == "file")
                .ok_or(ConfigError::MissingParam {
                    line,
                    family: "tabulated",
                    param: "file",
                })?;
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => Path::new(file).to_path_buf(),
            };
            let grid = read_table(&path)?;
            SpectralDensity::tabulated(grid)?
        }
        other => {
            return Err(ConfigError::UnknownFamily {
                line,
                family: other.to_string(),
            })
        }
    };
    Ok(if repeat {
        DensityLine::Repeat(density)
    } else {
        DensityLine::One(density)
    })
}

fn family_static(family: &str) -> &'static str {
    match family {
        "white" => "white",
        "ar1" => "ar1",
        "raised-cosine" => "raised-cosine",
        "tabulated" => "tabulated",
        _ => "unknown",
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut grid = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let bad = || ConfigError::BadTable {
            path: path.display().to_string(),
            line: idx + 1,
        };
        let (nu, value) = line.split_once(',').ok_or_else(bad)?;
        let nu = nu.trim().parse::<f64>().map_err(|_| bad())?;
        let value = value.trim().parse::<f64>().map_err(|_| bad())?;
        grid.push((nu, value));
    }
    Ok(grid)
}
