//! Kernel density baseline, distances between intensities, and
//! goodness-of-fit checks.

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::domain::{DomainBounds, DomainError, PointPattern};
use crate::estimate::FittedIntensity;
use crate::flow::{logit_embed, FlowError};
use crate::grid::{cell_volume, centers};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("empty pattern")]
    Empty,
    #[error("dimension {dim} has zero sample variance")]
    DegenerateDimension { dim: usize },
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Gaussian product-kernel intensity estimate with a rule-of-thumb bandwidth.
///
/// Points and bandwidths live on the unit cube obtained by stretching the
/// pattern's bounds; `intensity_at` maps back to original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    pub points: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub n: usize,
    pub bounds: DomainBounds,
}

/// `(4 / ((d + 2) n))^(1 / (d + 4))`, the factor multiplying each
/// dimension's standard deviation.
pub fn silverman_factor(d: usize, n: usize) -> f64 {
    (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0))
}

/// Fits the kernel estimate; bandwidth `h_k = sd_k * silverman_factor(d, n)`.
pub fn kde_fit(pattern: &PointPattern) -> Result<KdeModel, EvalError> {
    let n = pattern.len();
    if n < 2 {
        return Err(EvalError::InsufficientData { needed: 2, got: n });
    }
    let d = pattern.dim();
    let (unit, bounds, _) = pattern.normalize(0.0)?;
    let factor = silverman_factor(d, n);
    let mut bandwidths = Vec::with_capacity(d);
    for k in 0..d {
        let col: Vec<f64> = unit.points().map(|p| p[k]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(EvalError::DegenerateDimension { dim: k });
        }
        bandwidths.push(var.sqrt() * factor);
    }
    Ok(KdeModel {
        points: unit.coords().to_vec(),
        bandwidths,
        n,
        bounds,
    })
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    /// `sum_i K_h(u - u_i)` on the unit cube.
    pub fn unit_intensity(&self, u: &[f64]) -> f64 {
        let d = self.dim();
        let norm: f64 = self
            .bandwidths
            .iter()
            .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
            .product();
        let total: f64 = self
            .points
            .chunks(d)
            .map(|p| {
                let q: f64 = (0..d)
                    .map(|k| {
                        let z = (u[k] - p[k]) / self.bandwidths[k];
                        z * z
                    })
                    .sum();
                (-0.5 * q).exp()
            })
            .sum();
        total / norm
    }

    /// Intensity in original coordinates; defined everywhere.
    pub fn intensity_at(&self, x: &[f64]) -> f64 {
        let mut u = vec![0.0; x.len()];
        self.bounds.to_unit(x, &mut u);
        self.unit_intensity(&u) / self.bounds.padded_volume()
    }
}

/// Default evaluation cells per dimension: 1000 for curves, 256 otherwise.
pub fn default_resolution(dim: usize) -> usize {
    if dim == 1 {
        1000
    } else {
        256
    }
}

/// `sqrt(int (fa - fb)^2)` over `bounds` by the midpoint rule with
/// `resolution` cells per dimension.
pub fn l2_distance<F, G>(mut fa: F, mut fb: G, bounds: &DomainBounds, resolution: usize) -> f64
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> f64,
{
    let res = vec![resolution; bounds.dim()];
    let cell = cell_volume(&bounds.lo, &bounds.hi, &res);
    let ss: f64 = centers(&bounds.lo, &bounds.hi, &res)
        .map(|c| {
            let diff = fa(&c) - fb(&c);
            diff * diff
        })
        .sum();
    (ss * cell).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample Kolmogorov-Smirnov statistic of `values` against Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    ks_sorted(&v, |x| x.clamp(0.0, 1.0))
}

/// KS statistic of sorted `values` against the CDF `cdf`.
pub fn ks_sorted<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Goodness of fit through the probability integral transform.
#[derive(Debug, Clone, PartialEq)]
pub struct PitReport {
    pub ks_statistic: f64,
    /// `((i - 0.5) / m, u_(i))` for the `m = n d` pooled transformed values.
    pub qq_points: Vec<(f64, f64)>,
}

/// Minimum pattern size accepted by [`pit_ks`].
pub const PIT_MIN_POINTS: usize = 10;

/// Maps every point through the fitted map and the normal CDF, pools the
/// coordinates and compares them with Uniform(0, 1).
pub fn pit_ks(model: &FittedIntensity, pattern: &PointPattern) -> Result<PitReport, EvalError> {
    if pattern.is_empty() {
        return Err(EvalError::Empty);
    }
    if pattern.len() < PIT_MIN_POINTS {
        return Err(EvalError::InsufficientData {
            needed: PIT_MIN_POINTS,
            got: pattern.len(),
        });
    }
    let d = model.dim();
    if pattern.dim() != d {
        return Err(EvalError::Dimension {
            expected: d,
            got: pattern.dim(),
        });
    }
    let mut u = vec![0.0; d];
    let mut pooled = Vec::with_capacity(pattern.len() * d);
    for p in pattern.points() {
        model.bounds.to_unit(p, &mut u);
        let (z, _) = model.stack.forward(&logit_embed(&u).y)?;
        pooled.extend(z.iter().map(|&v| normal_cdf(v)));
    }
    pooled.sort_by(f64::total_cmp);
    let ks_statistic = ks_sorted(&pooled, |x| x);
    let m = pooled.len() as f64;
    let qq_points = pooled
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 0.5) / m, v))
        .collect();
    Ok(PitReport { ks_statistic, qq_points })
}

/// Ranks starting at 1, ties given their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
