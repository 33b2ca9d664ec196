//! Regular midpoint grids over rectangular domains.

use crate::domain::DomainBounds;

/// Cell-centred lattice over a box with one scalar per cell.
///
/// Cells are stored in row-major order: the last coordinate varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSurface {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridSurface {
    /// Evaluates `f` at every cell centre of `[lo, hi]`.
    pub fn evaluate<F>(lo: &[f64], hi: &[f64], resolution: &[usize], mut f: F) -> Self
    where
        F: FnMut(&[f64]) -> f64,
    {
        let values = centers(lo, hi, resolution).map(|c| f(&c)).collect();
        Self {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            resolution: resolution.to_vec(),
            values,
        }
    }

    /// Same lattice, `resolution` cells per dimension, over the unpadded bounds.
    pub fn over_bounds<F>(bounds: &DomainBounds, resolution: usize, f: F) -> Self
    where
        F: FnMut(&[f64]) -> f64,
    {
        let res = vec![resolution; bounds.dim()];
        Self::evaluate(&bounds.lo, &bounds.hi, &res, f)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        cell_volume(&self.lo, &self.hi, &self.resolution)
    }

    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        centers(&self.lo, &self.hi, &self.resolution)
    }

    /// Midpoint-rule integral of the stored values.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }
}

pub fn cell_volume(lo: &[f64], hi: &[f64], resolution: &[usize]) -> f64 {
    lo.iter()
        .zip(hi)
        .zip(resolution)
        .map(|((l, h), &r)| (h - l) / r as f64)
        .product()
}

/// Cell centres in row-major order (last coordinate fastest).
pub fn centers<'a>(lo: &'a [f64], hi: &'a [f64], resolution: &'a [usize]) -> impl Iterator<Item = Vec<f64>> + 'a {
    let total: usize = resolution.iter().product();
    let d = lo.len();
    (0..total).map(move |mut flat| {
        let mut c = vec![0.0; d];
        for k in (0..d).rev() {
            let i = flat % resolution[k];
            flat /= resolution[k];
            let w = (hi[k] - lo[k]) / resolution[k] as f64;
            c[k] = lo[k] + (i as f64 + 0.5) * w;
        }
        c
    })
}
