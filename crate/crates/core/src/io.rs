//! Reading data matrices and writing or reading fit directories.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! written matrix reads back bit for bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::canonical::{CanonicalFit, CenteredFit};
use crate::engine::{DataMatrix, ModelSpec};
use crate::error::{DmfError, Result};
use crate::family::{Family, Link};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    Csv,
    MatrixMarket,
}

impl MatrixFormat {
    /// `.mtx` is MatrixMarket; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("mtx") => Self::MatrixMarket,
            _ => Self::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = DmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "mtx" | "matrix-market" | "matrixmarket" => Ok(Self::MatrixMarket),
            other => Err(DmfError::InvalidArgument(format!("unknown matrix format {other:?}"))),
        }
    }
}

/// A parsed matrix with optional labels. `weights` is set only when a
/// MatrixMarket file was read with missing entries held out.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub values: DMatrix<f64>,
    pub row_labels: Option<Vec<String>>,
    pub col_labels: Option<Vec<String>>,
    pub weights: Option<DMatrix<f64>>,
}

impl MatrixFile {
    pub fn into_data(self) -> Result<DataMatrix> {
        match self.weights {
            Some(w) => DataMatrix::with_weights(self.values, w),
            None => Ok(DataMatrix::new(self.values)),
        }
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> DmfError {
    DmfError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a dense CSV or a MatrixMarket coordinate file.
///
/// MatrixMarket entries absent from the file are zero with weight one, or
/// weight zero when `missing_as_holdout` is set.
pub fn read_matrix(path: &Path, format: MatrixFormat, missing_as_holdout: bool) -> Result<MatrixFile> {
    let text = fs::read_to_string(path)?;
    match format {
        MatrixFormat::Csv => parse_csv(path, &text),
        MatrixFormat::MatrixMarket => parse_matrix_market(path, &text, missing_as_holdout),
    }
}

fn parse_value(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Dense CSV. A first line with any non-numeric cell is a header; a first
/// column with non-numeric cells holds row labels.
pub fn parse_csv(path: &Path, text: &str) -> Result<MatrixFile> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(parse_error(path, 1, "empty file"));
    }
    let split = |l: &str| -> Vec<String> { l.split(',').map(|c| c.trim().trim_matches('"').to_string()).collect() };

    let first = split(lines[0].1);
    let has_header = first.iter().any(|c| parse_value(c).is_none());
    let body = if has_header { &lines[1..] } else { &lines[..] };
    if body.is_empty() {
        return Err(parse_error(path, lines[0].0, "header without data rows"));
    }
    let rows: Vec<(usize, Vec<String>)> = body.iter().map(|&(n, l)| (n, split(l))).collect();
    let has_labels = rows.iter().any(|(_, r)| parse_value(&r[0]).is_none());
    let offset = usize::from(has_labels);

    let width = rows[0].1.len();
    if width <= offset {
        return Err(parse_error(path, rows[0].0, "no numeric columns"));
    }
    let p = width - offset;
    let n = rows.len();
    let mut values = DMatrix::zeros(n, p);
    let mut row_labels = has_labels.then(Vec::new);
    for (i, (line, cells)) in rows.iter().enumerate() {
        if cells.len() != width {
            return Err(parse_error(
                path,
                *line,
                format!("expected {width} fields, found {}", cells.len()),
            ));
        }
        if let Some(labels) = row_labels.as_mut() {
            labels.push(cells[0].clone());
        }
        for (j, cell) in cells[offset..].iter().enumerate() {
            let v = parse_value(cell)
                .ok_or_else(|| parse_error(path, *line, format!("field {} is not a number: {cell:?}", j + offset + 1)))?;
            if !v.is_finite() {
                return Err(parse_error(path, *line, format!("field {} is not finite", j + offset + 1)));
            }
            values[(i, j)] = v;
        }
    }
    let col_labels = if has_header {
        if first.len() != width && first.len() != p {
            return Err(parse_error(
                path,
                lines[0].0,
                format!("header has {} fields but rows have {width}", first.len()),
            ));
        }
        Some(first[first.len() - p..].to_vec())
    } else {
        None
    };
    Ok(MatrixFile {
        values,
        row_labels,
        col_labels,
        weights: None,
    })
}

/// MatrixMarket `coordinate` format with `real` or `integer` values and
/// `general` or `symmetric` structure.
pub fn parse_matrix_market(path: &Path, text: &str, missing_as_holdout: bool) -> Result<MatrixFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hline, header) = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_error(path, hline, "expected a %%MatrixMarket matrix header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_error(path, hline, format!("unsupported layout {:?}", tokens[2])));
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(parse_error(path, hline, format!("unsupported field {:?}", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_error(path, hline, format!("unsupported symmetry {other:?}"))),
    };

    let mut content = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (sline, size) = content.next().ok_or_else(|| parse_error(path, hline, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_error(path, sline, "size line must be three integers"))?;
    if dims.len() != 3 || dims[0] == 0 || dims[1] == 0 {
        return Err(parse_error(path, sline, "size line must be: rows columns entries"));
    }
    let (n, p, nnz) = (dims[0], dims[1], dims[2]);
    let mut values = DMatrix::zeros(n, p);
    let mut weights = DMatrix::from_element(n, p, if missing_as_holdout { 0.0 } else { 1.0 });
    let mut count = 0;
    for (line, entry) in content {
        let parts: Vec<&str> = entry.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_error(path, line, "entries must be: row column value"));
        }
        let i: usize = parts[0].parse().map_err(|_| parse_error(path, line, "bad row index"))?;
        let j: usize = parts[1].parse().map_err(|_| parse_error(path, line, "bad column index"))?;
        let v: f64 = parts[2].parse().map_err(|_| parse_error(path, line, "bad value"))?;
        if i == 0 || i > n || j == 0 || j > p {
            return Err(parse_error(path, line, format!("index ({i}, {j}) outside {n}x{p}")));
        }
        if !v.is_finite() {
            return Err(parse_error(path, line, "value is not finite"));
        }
        values[(i - 1, j - 1)] = v;
        weights[(i - 1, j - 1)] = 1.0;
        if symmetric && i != j {
            if j > n || i > p {
                return Err(parse_error(path, line, "symmetric entry outside a square shape"));
            }
            values[(j - 1, i - 1)] = v;
            weights[(j - 1, i - 1)] = 1.0;
        }
        count += 1;
    }
    if count != nnz {
        return Err(parse_error(path, sline, format!("header declares {nnz} entries but {count} were read")));
    }
    Ok(MatrixFile {
        values,
        row_labels: None,
        col_labels: None,
        weights: missing_as_holdout.then_some(weights),
    })
}

/// Reads data and an optional weight matrix of the same shape.
pub fn read_data(
    input: &Path,
    weights: Option<&Path>,
    format: Option<MatrixFormat>,
    missing_as_holdout: bool,
) -> Result<DataMatrix> {
    let format = format.unwrap_or_else(|| MatrixFormat::from_path(input));
    let file = read_matrix(input, format, missing_as_holdout)?;
    match weights {
        None => file.into_data(),
        Some(wpath) => {
            let w = read_matrix(wpath, MatrixFormat::from_path(wpath), false)?.values;
            let w = match file.weights {
                Some(held) => w.component_mul(&held),
                None => w,
            };
            DataMatrix::with_weights(file.values, w)
        }
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub const META_FILE: &str = "meta.json";
pub const LAMBDA_FILE: &str = "lambda.csv";
pub const V_FILE: &str = "v.csv";
pub const D_FILE: &str = "d.csv";
pub const LAMBDA0_FILE: &str = "lambda0.csv";
pub const V0_FILE: &str = "v0.csv";

/// Everything about a fit other than its factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub family: Family,
    pub link: Link,
    pub rank: usize,
    pub dispersion: f64,
    /// `"fixed"` or `"mom"`.
    pub dispersion_source: String,
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub jitter: f64,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub effective_rank: usize,
    pub centered: bool,
    pub input: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub missing_as_holdout: bool,
}

impl FitMeta {
    pub fn new(spec: &ModelSpec, fit: &CanonicalFit, n: usize, p: usize) -> Self {
        Self {
            family: spec.family,
            link: spec.link,
            rank: spec.rank,
            dispersion: spec.family.dispersion(),
            dispersion_source: "fixed".into(),
            deviance_trace: fit.deviance_trace.clone(),
            converged: fit.converged,
            iterations: fit.iterations,
            max_iter: spec.max_iter,
            rel_tol: spec.rel_tol,
            jitter: spec.jitter,
            seed: spec.seed,
            n,
            p,
            effective_rank: fit.effective_rank,
            centered: false,
            input: None,
            weights: None,
            missing_as_holdout: false,
        }
    }
}

/// A fit as stored on disk: identified factors plus an optional center.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredFit {
    pub meta: FitMeta,
    pub lambda: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub d: Vec<f64>,
    pub lambda0: Option<DMatrix<f64>>,
    pub v0: Option<DMatrix<f64>>,
}

impl StoredFit {
    pub fn from_canonical(meta: FitMeta, fit: &CanonicalFit) -> Self {
        Self {
            meta,
            lambda: fit.lambda.clone(),
            v: fit.v.clone(),
            d: fit.d.clone(),
            lambda0: None,
            v0: None,
        }
    }

    pub fn from_centered(mut meta: FitMeta, fit: &CenteredFit) -> Self {
        meta.centered = true;
        Self {
            meta,
            lambda: fit.residual.lambda.clone(),
            v: fit.residual.v.clone(),
            d: fit.residual.d.clone(),
            lambda0: Some(fit.lambda0.clone()),
            v0: Some(fit.v0.clone()),
        }
    }

    /// The full fitted linear predictor, center included.
    pub fn eta(&self) -> DMatrix<f64> {
        let mut eta = &self.lambda * self.v.transpose();
        if let (Some(l0), Some(v0)) = (&self.lambda0, &self.v0) {
            eta += l0 * v0.transpose();
        }
        eta
    }

    /// Identified view of the stored factors.
    pub fn canonical(&self) -> CanonicalFit {
        let u = DMatrix::from_fn(self.lambda.nrows(), self.d.len(), |i, k| {
            if self.d[k] > 0.0 {
                self.lambda[(i, k)] / self.d[k]
            } else {
                0.0
            }
        });
        CanonicalFit {
            u,
            d: self.d.clone(),
            v: self.v.clone(),
            lambda: self.lambda.clone(),
            effective_rank: self.meta.effective_rank,
            deviance_trace: self.meta.deviance_trace.clone(),
            converged: self.meta.converged,
            iterations: self.meta.iterations,
        }
    }
}

/// Writes `lambda.csv`, `v.csv`, `d.csv`, the center files when present and
/// `meta.json` into `dir`, creating it if needed.
pub fn write_fit(fit: &StoredFit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join(LAMBDA_FILE), &fit.lambda)?;
    write_matrix_csv(&dir.join(V_FILE), &fit.v)?;
    let d = DMatrix::from_column_slice(fit.d.len(), 1, &fit.d);
    write_matrix_csv(&dir.join(D_FILE), &d)?;
    for (name, m) in [(LAMBDA0_FILE, &fit.lambda0), (V0_FILE, &fit.v0)] {
        let path = dir.join(name);
        match m {
            Some(m) => write_matrix_csv(&path, m)?,
            None if path.exists() => fs::remove_file(&path)?,
            None => {}
        }
    }
    let mut meta = serde_json::to_string_pretty(&fit.meta)?;
    meta.push('\n');
    fs::write(dir.join(META_FILE), meta)?;
    Ok(())
}

fn read_required(dir: &Path, name: &str) -> Result<DMatrix<f64>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DmfError::MissingArtifact(path));
    }
    Ok(read_matrix(&path, MatrixFormat::Csv, false)?.values)
}

/// Reads a directory written by [`write_fit`].
pub fn read_fit(dir: &Path) -> Result<StoredFit> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(DmfError::MissingArtifact(meta_path));
    }
    let meta: FitMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    let lambda = read_required(dir, LAMBDA_FILE)?;
    let v = read_required(dir, V_FILE)?;
    let d: Vec<f64> = read_required(dir, D_FILE)?.iter().copied().collect();
    if lambda.ncols() != v.ncols() || d.len() != v.ncols() {
        return Err(DmfError::InvalidArgument(format!(
            "inconsistent fit in {}: lambda has {} columns, v {}, d {}",
            dir.display(),
            lambda.ncols(),
            v.ncols(),
            d.len()
        )));
    }
    let (lambda0, v0) = if meta.centered {
        (Some(read_required(dir, LAMBDA0_FILE)?), Some(read_required(dir, V0_FILE)?))
    } else {
        (None, None)
    };
    Ok(StoredFit {
        meta,
        lambda,
        v,
        d,
        lambda0,
        v0,
    })
}
