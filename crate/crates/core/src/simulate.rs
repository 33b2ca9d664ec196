//! Inversion of triangular maps, simulation from a fitted intensity, and
//! thinning for closed-form benchmark intensities.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::diffkit::sigmoid;
use crate::domain::{DomainBounds, DomainError, PointPattern};
use crate::estimate::FittedIntensity;
use crate::flow::{FlowError, LayerRef, TransportStack};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("layer {layer}, coordinate {coord}: no bracket found after {expansions} expansions")]
    Bracket { layer: usize, coord: usize, expansions: usize },
    #[error("layer {layer}, coordinate {coord}: bisection stopped with residual {residual:e}")]
    NotConverged { layer: usize, coord: usize, residual: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("bound {bound} below supremum {supremum} observed on the validation grid")]
    BoundBelowSupremum { bound: f64, supremum: f64 },
    #[error("intensity is negative or non-finite at {at:?}")]
    InvalidIntensity { at: Vec<f64> },
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("invalid root-finding settings: {0}")]
    RootFind(&'static str),
}

/// Settings of the expanding-bracket bisection used to invert each
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootFindSpec {
    pub abs_tolerance: f64,
    pub max_bisections: usize,
    pub initial_half_width: f64,
    pub growth: f64,
}

/// Bracket expansions allowed before giving up.
pub const MAX_EXPANSIONS: usize = 60;

impl Default for RootFindSpec {
    fn default() -> Self {
        Self {
            abs_tolerance: 1e-10,
            max_bisections: 200,
            initial_half_width: 1.0,
            growth: 2.0,
        }
    }
}

impl RootFindSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.abs_tolerance > 0.0) {
            return Err(SimError::RootFind("tolerance must be positive"));
        }
        if !(self.growth > 1.0) {
            return Err(SimError::RootFind("growth factor must exceed 1"));
        }
        if !(self.initial_half_width > 0.0 && self.initial_half_width.is_finite()) {
            return Err(SimError::RootFind("initial half-width must be positive"));
        }
        Ok(())
    }
}

enum RootFail {
    Bracket(usize),
    Residual(f64),
    Flow(FlowError),
}

/// Solves `f(y) = target` for increasing `f`.
///
/// Bisection continues past the residual tolerance until the bracket is as
/// narrow as `abs_tolerance` relative to `|y|`, so the solution is accurate in
/// `y` as well as in `f(y)`.
fn solve_increasing<F>(f: F, target: f64, spec: &RootFindSpec) -> Result<f64, RootFail>
where
    F: Fn(f64) -> Result<f64, FlowError>,
{
    let g = |y: f64| f(y).map(|v| v - target).map_err(RootFail::Flow);
    let mut w = spec.initial_half_width;
    let mut lo = -w;
    let mut hi = w;
    let mut g_lo = g(lo)?;
    let mut g_hi = g(hi)?;
    let mut expansions = 0;
    while g_lo > 0.0 || g_hi < 0.0 {
        if expansions == MAX_EXPANSIONS {
            return Err(RootFail::Bracket(expansions));
        }
        w *= spec.growth;
        expansions += 1;
        if g_lo > 0.0 {
            hi = lo;
            g_hi = g_lo;
            lo = -w;
            g_lo = g(lo)?;
        } else {
            lo = hi;
            g_lo = g_hi;
            hi = w;
            g_hi = g(hi)?;
        }
    }
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    let mut best = if -g_lo < g_hi { (lo, g_lo) } else { (hi, g_hi) };
    for _ in 0..spec.max_bisections {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid)?;
        if g_mid.abs() < best.1.abs() {
            best = (mid, g_mid);
        }
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if best.1.abs() <= spec.abs_tolerance && hi - lo <= spec.abs_tolerance * mid.abs().max(1.0) {
            break;
        }
    }
    if best.1.abs() <= spec.abs_tolerance {
        Ok(best.0)
    } else {
        Err(RootFail::Residual(best.1.abs()))
    }
}

fn invert_layer_indexed(layer: LayerRef<'_>, z: &[f64], spec: &RootFindSpec, index: usize) -> Result<Vec<f64>, SimError> {
    let d = layer.dim();
    if z.len() != d {
        return Err(FlowError::Dimension { expected: d, got: z.len() }.into());
    }
    let kind = layer.kind();
    let mut y = vec![0.0; d];
    let mut theta = Vec::with_capacity(kind.n_params());
    for k in 0..d {
        layer.component_params(k, &y[..k], &mut theta)?;
        let f = |v: f64| crate::flow::sublayer_eval(v, &theta, kind).map(|(s, _)| s);
        y[k] = solve_increasing(f, z[k], spec).map_err(|e| match e {
            RootFail::Bracket(expansions) => SimError::Bracket {
                layer: index,
                coord: k,
                expansions,
            },
            RootFail::Residual(residual) => SimError::NotConverged {
                layer: index,
                coord: k,
                residual,
            },
            RootFail::Flow(e) => SimError::Flow(e),
        })?;
    }
    Ok(y)
}

/// Solves `layer(y) = z` one coordinate at a time.
pub fn invert_layer(layer: LayerRef<'_>, z: &[f64], spec: &RootFindSpec) -> Result<Vec<f64>, SimError> {
    spec.validate()?;
    invert_layer_indexed(layer, z, spec, 0)
}

/// Inverts the whole stack by inverting its layers last to first.
pub fn invert_stack(stack: &TransportStack, z: &[f64], spec: &RootFindSpec) -> Result<Vec<f64>, SimError> {
    spec.validate()?;
    let mut cur = z.to_vec();
    for j in (0..stack.n_layers()).rev() {
        cur = invert_layer_indexed(stack.layer(j), &cur, spec, j)?;
    }
    Ok(cur)
}

/// Bounds of the box the model places mass on: the padded domain.
fn support_bounds(model: &FittedIntensity) -> Result<DomainBounds, DomainError> {
    let b = &model.bounds;
    let d = b.dim();
    DomainBounds::new((0..d).map(|k| b.padded_lo(k)).collect(), (0..d).map(|k| b.padded_hi(k)).collect())
}

/// Draws `n` points from the fitted process density using `rng`.
pub fn sample_fixed_with(model: &FittedIntensity, n: usize, rng: &mut StreamRng) -> Result<PointPattern, SimError> {
    let d = model.dim();
    let bounds = support_bounds(model)?;
    let spec = RootFindSpec::default();
    let mut coords = Vec::with_capacity(n * d);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y = invert_stack(&model.stack, &z, &spec)?;
        let u: Vec<f64> = y.iter().map(|&v| sigmoid(v)).collect();
        model.bounds.from_unit(&u, &mut x);
        for ((v, lo), hi) in x.iter().zip(&bounds.lo).zip(&bounds.hi) {
            coords.push(v.clamp(*lo, *hi));
        }
    }
    Ok(PointPattern::new(d, coords, bounds)?)
}

/// Draws exactly `n` points from the fitted model.
///
/// The returned pattern's bounds are the padded box the model was fitted on.
pub fn sample_fixed(model: &FittedIntensity, n: usize, seed: u64) -> Result<PointPattern, SimError> {
    sample_fixed_with(model, n, &mut rng::stream(seed, 0))
}

/// Draws a Poisson(`lambda * 1`) count; zero rate gives zero.
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize, SimError> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(SimError::InvalidRate(mean));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|_| SimError::InvalidRate(mean))?;
    Ok(dist.sample(rng) as usize)
}

/// Simulates a realisation of the fitted process: a Poisson(`mu_hat`) count
/// of points drawn from the fitted density.
pub fn sample_pattern(model: &FittedIntensity, seed: u64) -> Result<PointPattern, SimError> {
    let mut rng = rng::stream(seed, 0);
    let n = poisson_count(model.mu_hat, &mut rng)?;
    sample_fixed_with(model, n, &mut rng)
}

/// Closed-form benchmark intensities on the unit interval or square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinIntensity {
    /// `500 + 300 sin(10 x)`
    Lambda1,
    /// `500`
    Lambda2,
    /// `(30 + 10 sin(10 x1)) (30 + 10 cos(20 x2))`
    Lambda3,
    /// `900` on the square
    Lambda4,
}

impl BuiltinIntensity {
    pub const ALL: [BuiltinIntensity; 4] = [Self::Lambda1, Self::Lambda2, Self::Lambda3, Self::Lambda4];

    pub fn dim(&self) -> usize {
        match self {
            Self::Lambda1 | Self::Lambda2 => 1,
            Self::Lambda3 | Self::Lambda4 => 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Lambda1 => 500.0 + 300.0 * (10.0 * x[0]).sin(),
            Self::Lambda2 => 500.0,
            Self::Lambda3 => (30.0 + 10.0 * (10.0 * x[0]).sin()) * (30.0 + 10.0 * (20.0 * x[1]).cos()),
            Self::Lambda4 => 900.0,
        }
    }

    /// Upper bound used for thinning.
    pub fn supremum(&self) -> f64 {
        match self {
            Self::Lambda1 => 800.0,
            Self::Lambda2 => 500.0,
            Self::Lambda3 => 1600.0,
            Self::Lambda4 => 900.0,
        }
    }

    /// Integral over the unit domain.
    pub fn integral(&self) -> f64 {
        match self {
            Self::Lambda1 => 500.0 + 30.0 * (1.0 - 10f64.cos()),
            Self::Lambda2 => 500.0,
            Self::Lambda3 => (30.0 + (1.0 - 10f64.cos())) * (30.0 + 0.5 * 20f64.sin()),
            Self::Lambda4 => 900.0,
        }
    }

    pub fn domain(&self) -> DomainBounds {
        DomainBounds::unit(self.dim())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lambda1 => "lambda1",
            Self::Lambda2 => "lambda2",
            Self::Lambda3 => "lambda3",
            Self::Lambda4 => "lambda4",
        }
    }

    /// One thinned realisation on the unit domain.
    pub fn generate(&self, seed: u64) -> Result<PointPattern, SimError> {
        thinning_generate(|x| self.eval(x), self.dim(), self.supremum(), seed)
    }
}

impl fmt::Display for BuiltinIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinIntensity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown intensity '{s}' (expected lambda1..lambda4)"))
    }
}

/// Nodes per dimension of the grid used to check a thinning bound.
fn validation_nodes(dim: usize) -> usize {
    (10_000f64.powf(1.0 / dim as f64).round() as usize).max(2)
}

/// Largest value of `intensity` over a grid of about 10^4 nodes on the unit
/// cube (endpoints included).
pub fn grid_supremum<F>(intensity: &F, dim: usize) -> Result<f64, SimError>
where
    F: Fn(&[f64]) -> f64,
{
    let m = validation_nodes(dim);
    let total = m.pow(dim as u32);
    let mut x = vec![0.0; dim];
    let mut sup = f64::NEG_INFINITY;
    for flat in 0..total {
        let mut rem = flat;
        for k in (0..dim).rev() {
            x[k] = (rem % m) as f64 / (m - 1) as f64;
            rem /= m;
        }
        let v = intensity(&x);
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::InvalidIntensity { at: x });
        }
        sup = sup.max(v);
    }
    Ok(sup)
}

/// Simulates a Poisson process with the given intensity on the unit cube by
/// thinning a homogeneous process of rate `lambda_max`.
pub fn thinning_generate<F>(intensity: F, dim: usize, lambda_max: f64, seed: u64) -> Result<PointPattern, SimError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(SimError::InvalidRate(lambda_max));
    }
    let sup = grid_supremum(&intensity, dim)?;
    if lambda_max < sup {
        return Err(SimError::BoundBelowSupremum {
            bound: lambda_max,
            supremum: sup,
        });
    }
    let mut rng = rng::stream(seed, 0);
    let candidates = poisson_count(lambda_max, &mut rng)?;
    let mut coords = Vec::new();
    let mut x = vec![0.0; dim];
    for _ in 0..candidates {
        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
        let accept: f64 = rng.random();
        let v = intensity(&x);
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimError::InvalidIntensity { at: x });
        }
        if accept * lambda_max < v {
            coords.extend_from_slice(&x);
        }
    }
    Ok(PointPattern::new(dim, coords, DomainBounds::unit(dim))?)
}
