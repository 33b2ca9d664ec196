//! Rectangular observation domains and point patterns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("zero range in dimension {dim}")]
    ZeroRange { dim: usize },
    #[error("invalid bounds in dimension {dim}: lo {lo} must be below hi {hi}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("point {index} lies outside the domain")]
    OutsideBounds { index: usize },
    #[error("non-finite coordinate in point {index}")]
    NonFinite { index: usize },
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty pattern")]
    Empty,
    #[error("padding must be a finite non-negative fraction, got {0}")]
    Padding(f64),
}

/// Axis-aligned box `[lo, hi]` plus the padding fraction used when the box is
/// mapped onto the unit cube.
///
/// The unit cube corresponds to the padded box
/// `[lo - p * range, hi + p * range]` in every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub padding: f64,
}

impl DomainBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DomainError> {
        if lo.len() != hi.len() {
            return Err(DomainError::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (dim, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(DomainError::InvalidBounds { dim, lo: l, hi: h });
            }
            if l == h {
                return Err(DomainError::ZeroRange { dim });
            }
        }
        Ok(Self { lo, hi, padding: 0.0 })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
            padding: 0.0,
        }
    }

    pub fn with_padding(mut self, padding: f64) -> Result<Self, DomainError> {
        if !(padding.is_finite() && padding >= 0.0) {
            return Err(DomainError::Padding(padding));
        }
        self.padding = padding;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn range(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn padded_lo(&self, k: usize) -> f64 {
        self.lo[k] - self.padding * self.range(k)
    }

    pub fn padded_hi(&self, k: usize) -> f64 {
        self.hi[k] + self.padding * self.range(k)
    }

    pub fn padded_span(&self, k: usize) -> f64 {
        self.padded_hi(k) - self.padded_lo(k)
    }

    /// Volume of the padded box; densities on the unit cube are divided by it.
    pub fn padded_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.padded_span(k)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.range(k)).product()
    }

    pub fn to_unit(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = (x[k] - self.padded_lo(k)) / self.padded_span(k);
        }
    }

    pub fn from_unit(&self, u: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = self.padded_lo(k) + u[k] * self.padded_span(k);
        }
    }

    /// Closed containment in the unpadded box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(k, &v)| v >= self.lo[k] && v <= self.hi[k])
    }

    /// Closed containment in the padded box.
    pub fn contains_padded(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= self.padded_lo(k) && v <= self.padded_hi(k))
    }
}

/// A set of `d`-dimensional event locations together with their domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    dim: usize,
    coords: Vec<f64>,
    bounds: DomainBounds,
}

impl PointPattern {
    /// `coords` holds the points row by row.
    pub fn new(dim: usize, coords: Vec<f64>, bounds: DomainBounds) -> Result<Self, DomainError> {
        if bounds.dim() != dim {
            return Err(DomainError::Dimension {
                expected: dim,
                got: bounds.dim(),
            });
        }
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(DomainError::Dimension {
                expected: dim,
                got: coords.len(),
            });
        }
        for (index, p) in coords.chunks(dim).enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(DomainError::NonFinite { index });
            }
            if !bounds.contains(p) {
                return Err(DomainError::OutsideBounds { index });
            }
        }
        Ok(Self { dim, coords, bounds })
    }

    /// Uses the per-dimension minimum and maximum of the points as bounds.
    pub fn with_inferred_bounds(dim: usize, coords: Vec<f64>) -> Result<Self, DomainError> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(DomainError::Dimension {
                expected: dim,
                got: coords.len(),
            });
        }
        if coords.is_empty() {
            return Err(DomainError::Empty);
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for (index, p) in coords.chunks(dim).enumerate() {
            for k in 0..dim {
                if !p[k].is_finite() {
                    return Err(DomainError::NonFinite { index });
                }
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let bounds = DomainBounds::new(lo, hi)?;
        Ok(Self { dim, coords, bounds })
    }

    pub fn empty(bounds: DomainBounds) -> Self {
        Self {
            dim: bounds.dim(),
            coords: Vec::new(),
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn bounds(&self) -> &DomainBounds {
        &self.bounds
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    /// Pattern made of the points at `indices` (repeats allowed), same bounds.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            coords,
            bounds: self.bounds.clone(),
        }
    }

    /// Maps the pattern affinely onto the unit cube.
    ///
    /// Each dimension's padded interval `[lo - p * range, hi + p * range]` is
    /// sent to `[0, 1]`. Returns the unit-cube pattern and the bounds (with
    /// padding recorded) needed to map intensities back. The third value
    /// counts coordinates that land exactly on the unit cube's boundary.
    pub fn normalize(&self, padding: f64) -> Result<(PointPattern, DomainBounds, usize), DomainError> {
        if self.is_empty() {
            return Err(DomainError::Empty);
        }
        for k in 0..self.dim {
            if self.bounds.range(k) <= 0.0 {
                return Err(DomainError::ZeroRange { dim: k });
            }
        }
        let bounds = self.bounds.clone().with_padding(padding)?;
        let mut coords = vec![0.0; self.coords.len()];
        let mut on_boundary = 0;
        for (src, dst) in self.coords.chunks(self.dim).zip(coords.chunks_mut(self.dim)) {
            bounds.to_unit(src, dst);
            for v in dst.iter_mut() {
                *v = v.clamp(0.0, 1.0);
                if *v == 0.0 || *v == 1.0 {
                    on_boundary += 1;
                }
            }
        }
        let unit = PointPattern {
            dim: self.dim,
            coords,
            bounds: DomainBounds::unit(self.dim),
        };
        Ok((unit, bounds, on_boundary))
    }
}
