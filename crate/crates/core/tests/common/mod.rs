#![allow(dead_code)]

use nhpp_flow::estimate::FittedIntensity;
use nhpp_flow::grid::{cell_volume, centers};

/// Padded box of a fitted model as (lo, hi).
pub fn support(model: &FittedIntensity) -> (Vec<f64>, Vec<f64>) {
    let b = &model.bounds;
    let d = b.dim();
    (
        (0..d).map(|k| b.padded_lo(k)).collect(),
        (0..d).map(|k| b.padded_hi(k)).collect(),
    )
}

/// Midpoint-rule integral of the fitted intensity over its support.
pub fn intensity_mass(model: &FittedIntensity, cells: usize) -> f64 {
    let (lo, hi) = support(model);
    let res = vec![cells; lo.len()];
    let vol = cell_volume(&lo, &hi, &res);
    centers(&lo, &hi, &res)
        .map(|c| model.intensity_at(&c).unwrap())
        .sum::<f64>()
        * vol
}

/// Distribution function of a fitted one-dimensional model, by cumulative
/// quadrature of its density with linear interpolation between cell edges.
pub struct QuadratureCdf {
    lo: f64,
    width: f64,
    cum: Vec<f64>,
}

impl QuadratureCdf {
    pub fn new(model: &FittedIntensity, cells: usize) -> Self {
        let (lo, hi) = support(model);
        let width = (hi[0] - lo[0]) / cells as f64;
        let mut cum = Vec::with_capacity(cells + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..cells {
            let x = lo[0] + (i as f64 + 0.5) * width;
            acc += model.intensity_at(&[x]).unwrap() * width;
            cum.push(acc);
        }
        for v in &mut cum {
            *v /= acc;
        }
        Self { lo: lo[0], width, cum }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.lo) / self.width;
        if t <= 0.0 {
            return 0.0;
        }
        let i = t.floor() as usize;
        if i + 1 >= self.cum.len() {
            return 1.0;
        }
        let f = t - i as f64;
        self.cum[i] + f * (self.cum[i + 1] - self.cum[i])
    }
}

/// Median of a slice (copied and sorted).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}
