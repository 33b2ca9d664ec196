//! Point and surface CSV files, and the model archive.
//!
//! The archive is a JSON document:
//!
//! ```text
//! {
//!   "format": "nhpp-flow-model",
//!   "version": 1,
//!   "dim": 2,
//!   "n_layers": 4,
//!   "sublayer": { "family": "naf", "m": 64 },
//!   "cond_hidden": 64,
//!   "params": [ ... ],
//!   "bounds": { "lo": [...], "hi": [...], "padding": 0.01 },
//!   "mu_hat": 1000.0,
//!   "fit": { "seed": 0, "iterations": 5000, "final_objective": -512.3 }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so parameters reload
//! bit-exactly. All writes go to a temporary file that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainBounds, DomainError, PointPattern};
use crate::estimate::FittedIntensity;
use crate::flow::{FlowError, SublayerKind, TransportStack};
use crate::grid::GridSurface;

pub const ARCHIVE_FORMAT: &str = "nhpp-flow-model";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': '{value}' is not a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("empty pattern")]
    Empty,
    #[error("invalid model archive: {0}")]
    Archive(String),
    #[error("unsupported archive version {found} (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Reads a point CSV with a header row.
///
/// `columns` selects columns by header name; `None` takes all of them in
/// file order. The pattern's bounds are the per-column minima and maxima.
pub fn parse_points(path: &Path, columns: Option<&[String]>) -> Result<PointPattern, IoError> {
    let (dim, coords) = read_columns(path, columns)?;
    if coords.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(PointPattern::with_inferred_bounds(dim, coords)?)
}

/// Like [`parse_points`] but with the given domain instead of inferred bounds.
pub fn parse_points_in(path: &Path, columns: Option<&[String]>, bounds: DomainBounds) -> Result<PointPattern, IoError> {
    let (dim, coords) = read_columns(path, columns)?;
    if coords.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(PointPattern::new(dim, coords, bounds)?)
}

fn read_columns(path: &Path, columns: Option<&[String]>) -> Result<(usize, Vec<f64>), IoError> {
    let csv_err = |e: csv::Error| IoError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => IoError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => IoError::Csv {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })?;
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let selected: Vec<usize> = match columns {
        Some(names) => names
            .iter()
            .map(|n| headers.iter().position(|h| h == n).ok_or_else(|| IoError::MissingColumn(n.clone())))
            .collect::<Result<_, _>>()?,
        None => (0..headers.len()).collect(),
    };
    if selected.is_empty() {
        return Err(IoError::Empty);
    }
    let mut coords = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for &c in &selected {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| IoError::NonNumeric {
                row: i + 1,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            coords.push(v);
        }
    }
    Ok((selected.len(), coords))
}

fn coordinate_header(dim: usize) -> String {
    (1..=dim).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

/// Writes points with header `x1,...,xd`.
pub fn write_points(path: &Path, pattern: &PointPattern) -> Result<(), IoError> {
    let mut out = coordinate_header(pattern.dim());
    out.push('\n');
    for p in pattern.points() {
        push_row(&mut out, p);
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a surface as `x1[,x2],value` rows at the cell centres, last
/// coordinate varying fastest.
pub fn write_surface(path: &Path, surface: &GridSurface) -> Result<(), IoError> {
    let mut out = coordinate_header(surface.dim());
    out.push_str(",value\n");
    let mut row = Vec::with_capacity(surface.dim() + 1);
    for (c, v) in surface.centers().zip(&surface.values) {
        row.clear();
        row.extend_from_slice(&c);
        row.push(*v);
        push_row(&mut out, &row);
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a surface CSV back as rows of `(coordinates, value)`.
pub fn read_surface(path: &Path) -> Result<Vec<(Vec<f64>, f64)>, IoError> {
    let (width, flat) = read_columns(path, None)?;
    Ok(flat
        .chunks(width)
        .map(|r| (r[..width - 1].to_vec(), r[width - 1]))
        .collect())
}

/// Writes `(fitted quantile, empirical quantile)` pairs.
pub fn write_qq(path: &Path, pairs: &[(f64, f64)]) -> Result<(), IoError> {
    let mut out = String::from("fitted,empirical\n");
    for &(a, b) in pairs {
        push_row(&mut out, &[a, b]);
    }
    write_atomic(path, out.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub final_objective: Option<f64>,
}

/// Serialised form of a [`FittedIntensity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n_layers: usize,
    pub sublayer: SublayerKind,
    pub cond_hidden: usize,
    pub params: Vec<f64>,
    pub bounds: DomainBounds,
    pub mu_hat: f64,
    pub fit: FitMetadata,
}

impl ModelArchive {
    pub fn from_model(model: &FittedIntensity) -> Self {
        let s = &model.stack;
        Self {
            format: ARCHIVE_FORMAT.to_string(),
            version: ARCHIVE_VERSION,
            dim: s.dim(),
            n_layers: s.n_layers(),
            sublayer: s.kind(),
            cond_hidden: s.hidden(),
            params: s.params().values().to_vec(),
            bounds: model.bounds.clone(),
            mu_hat: model.mu_hat,
            fit: FitMetadata {
                seed: model.seed,
                iterations: model.fit_trace.len(),
                final_objective: model.final_objective.is_finite().then_some(model.final_objective),
            },
        }
    }

    /// Validates the archive and rebuilds the model. The optimisation trace
    /// is not stored, so the rebuilt model's trace is empty.
    pub fn into_model(self) -> Result<FittedIntensity, IoError> {
        if self.format != ARCHIVE_FORMAT {
            return Err(IoError::Archive(format!("field 'format': expected '{ARCHIVE_FORMAT}'")));
        }
        if self.version != ARCHIVE_VERSION {
            return Err(IoError::Version {
                found: self.version as u64,
                expected: ARCHIVE_VERSION,
            });
        }
        if self.n_layers == 0 {
            return Err(IoError::Archive("field 'n_layers': must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(IoError::Archive("field 'dim': must be at least 1".into()));
        }
        if self.bounds.dim() != self.dim {
            return Err(IoError::Archive(format!(
                "field 'bounds': dimension {} does not match dim {}",
                self.bounds.dim(),
                self.dim
            )));
        }
        DomainBounds::new(self.bounds.lo.clone(), self.bounds.hi.clone())?.with_padding(self.bounds.padding)?;
        if !(self.mu_hat >= 0.0 && self.mu_hat.is_finite()) {
            return Err(IoError::Archive("field 'mu_hat': must be finite and non-negative".into()));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Archive("field 'params': non-finite value".into()));
        }
        let stack = TransportStack::from_parts(self.dim, self.n_layers, self.sublayer, self.cond_hidden, self.params)
            .map_err(|e| IoError::Archive(format!("field 'params': {e}")))?;
        let mut model = FittedIntensity::new(stack, self.mu_hat, self.bounds);
        model.seed = self.fit.seed;
        model.final_objective = self.fit.final_objective.unwrap_or(f64::NAN);
        Ok(model)
    }
}

pub fn archive_to_string(model: &FittedIntensity) -> String {
    // serialising plain data cannot fail
    serde_json::to_string_pretty(&ModelArchive::from_model(model)).unwrap_or_default()
}

pub fn archive_from_str(text: &str) -> Result<FittedIntensity, IoError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| IoError::Archive(e.to_string()))?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != ARCHIVE_VERSION as u64 {
            return Err(IoError::Version {
                found: v,
                expected: ARCHIVE_VERSION,
            });
        }
    }
    let archive: ModelArchive = serde_json::from_value(raw).map_err(|e| IoError::Archive(e.to_string()))?;
    archive.into_model()
}

pub fn save_model(path: &Path, model: &FittedIntensity) -> Result<(), IoError> {
    let mut text = archive_to_string(model);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<FittedIntensity, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    archive_from_str(&text)
}
