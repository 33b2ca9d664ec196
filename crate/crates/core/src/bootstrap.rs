//! Nonparametric bootstrap for the fitted intensity.
//!
//! Each replicate draws `n_b ~ Poisson(n)`, resamples `n_b` points with
//! replacement, and refits with the base configuration. Replicate `b` uses
//! its own random stream, so the ensemble does not depend on how replicates
//! are scheduled across threads.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{DomainBounds, PointPattern};
use crate::estimate::{fit, FitConfig, FitError, FittedIntensity};
use crate::grid::GridSurface;
use crate::rng;
use crate::simulate::poisson_count;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("B must be >= 2, got {0}")]
    TooFewReplicates(usize),
    #[error("insufficient data: need at least 2 points, got {0}")]
    InsufficientData(usize),
    #[error("only {succeeded} of {requested} replicates succeeded; at least 90% are required")]
    TooManyFailures { succeeded: usize, requested: usize },
    #[error("threshold must be a non-negative number, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Fraction of replicates that must succeed before surfaces are produced.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

pub const DEFAULT_REPLICATES: usize = 100;

/// Count draws at or below this are redrawn.
const MIN_RESAMPLE: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFailure {
    pub index: usize,
    pub count: usize,
    pub error: FitError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEnsemble {
    /// Successful refits in replicate order; `replicates[i].mu_hat` is its `n_b`.
    pub replicates: Vec<FittedIntensity>,
    /// `n_b` of every requested replicate, including failed ones.
    pub counts: Vec<usize>,
    pub failures: Vec<ReplicateFailure>,
    /// Count draws rejected for being too small.
    pub redraws: usize,
    pub bounds: DomainBounds,
    pub seed: u64,
}

fn run_replicate(
    pattern: &PointPattern,
    config: &FitConfig,
    seed: u64,
    index: usize,
) -> (usize, usize, Result<FittedIntensity, FitError>) {
    let mut rng = rng::replicate(seed, index);
    let n = pattern.len();
    let mut redraws = 0;
    let count = loop {
        // the mean is a positive count, so the draw cannot fail
        let c = poisson_count(n as f64, &mut rng).unwrap_or(0);
        if c > MIN_RESAMPLE {
            break c;
        }
        redraws += 1;
    };
    let picks: Vec<usize> = (0..count).map(|_| rng.random_range(0..n)).collect();
    let sample = pattern.select(&picks);
    let cfg = FitConfig {
        seed: rng::child_seed(seed, index as u64),
        ..config.clone()
    };
    (count, redraws, fit(&sample, &cfg))
}

/// Fits `b` bootstrap replicates of `pattern`, in parallel.
pub fn bootstrap_fit(
    pattern: &PointPattern,
    b: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<BootstrapEnsemble, BootstrapError> {
    if b < 2 {
        return Err(BootstrapError::TooFewReplicates(b));
    }
    if pattern.len() < 2 {
        return Err(BootstrapError::InsufficientData(pattern.len()));
    }
    config.validate()?;
    let results: Vec<_> = (0..b)
        .into_par_iter()
        .map(|i| run_replicate(pattern, config, seed, i))
        .collect();
    let mut ensemble = BootstrapEnsemble {
        replicates: Vec::with_capacity(b),
        counts: Vec::with_capacity(b),
        failures: Vec::new(),
        redraws: 0,
        bounds: pattern.bounds().clone(),
        seed,
    };
    for (index, (count, redraws, outcome)) in results.into_iter().enumerate() {
        ensemble.counts.push(count);
        ensemble.redraws += redraws;
        match outcome {
            Ok(model) => ensemble.replicates.push(model),
            Err(error) => ensemble.failures.push(ReplicateFailure { index, count, error }),
        }
    }
    Ok(ensemble)
}

impl BootstrapEnsemble {
    /// Ensemble made from already fitted replicates, all successful.
    pub fn from_replicates(replicates: Vec<FittedIntensity>, bounds: DomainBounds, seed: u64) -> Result<Self, BootstrapError> {
        if replicates.len() < 2 {
            return Err(BootstrapError::TooFewReplicates(replicates.len()));
        }
        Ok(Self {
            counts: replicates.iter().map(|r| r.mu_hat as usize).collect(),
            replicates,
            failures: Vec::new(),
            redraws: 0,
            bounds,
            seed,
        })
    }

    pub fn requested(&self) -> usize {
        self.counts.len()
    }

    fn check_success(&self) -> Result<(), BootstrapError> {
        let ok = self.replicates.len();
        if ok < 2 || (ok as f64) < MIN_SUCCESS_FRACTION * self.requested() as f64 {
            return Err(BootstrapError::TooManyFailures {
                succeeded: ok,
                requested: self.requested(),
            });
        }
        Ok(())
    }

    /// Intensity of every successful replicate on the cell centres of the
    /// domain, `resolution` cells per dimension.
    pub fn replicate_surfaces(&self, resolution: usize) -> Result<Vec<GridSurface>, BootstrapError> {
        self.replicates
            .par_iter()
            .map(|m| {
                let mut err = None;
                let s = GridSurface::over_bounds(&self.bounds, resolution, |x| match m.intensity_at(x) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                });
                match err {
                    Some(e) => Err(e.into()),
                    None => Ok(s),
                }
            })
            .collect()
    }

    /// Cellwise mean of the replicate intensities.
    pub fn mean_surface(&self, resolution: usize) -> Result<GridSurface, BootstrapError> {
        self.check_success()?;
        Ok(mean_of(&self.replicate_surfaces(resolution)?))
    }

    /// Cellwise sample standard deviation (divisor `B - 1`) of the replicate
    /// intensities.
    pub fn se_surface(&self, resolution: usize) -> Result<GridSurface, BootstrapError> {
        self.check_success()?;
        Ok(sd_of(&self.replicate_surfaces(resolution)?))
    }

    /// Cellwise fraction of replicates whose intensity exceeds `threshold`.
    pub fn exceedance_surface(&self, threshold: f64, resolution: usize) -> Result<GridSurface, BootstrapError> {
        if !(threshold >= 0.0) {
            return Err(BootstrapError::Threshold(threshold));
        }
        self.check_success()?;
        Ok(exceedance_of(&self.replicate_surfaces(resolution)?, threshold))
    }
}

fn combine<F: Fn(&[f64]) -> f64>(surfaces: &[GridSurface], f: F) -> GridSurface {
    let first = &surfaces[0];
    let mut column = vec![0.0; surfaces.len()];
    let values = (0..first.len())
        .map(|c| {
            for (slot, s) in column.iter_mut().zip(surfaces) {
                *slot = s.values[c];
            }
            f(&column)
        })
        .collect();
    GridSurface {
        values,
        ..first.clone()
    }
}

pub fn mean_of(surfaces: &[GridSurface]) -> GridSurface {
    combine(surfaces, |v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn sd_of(surfaces: &[GridSurface]) -> GridSurface {
    combine(surfaces, |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    })
}

pub fn exceedance_of(surfaces: &[GridSurface], threshold: f64) -> GridSurface {
    combine(surfaces, |v| v.iter().filter(|&&x| x > threshold).count() as f64 / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::Batch;
    use crate::flow::{SublayerKind, TransportStack};

    fn constant_model(mu: f64) -> FittedIntensity {
        let stack = TransportStack::identity(1, 1, SublayerKind::AffineAutoregressive, 1).unwrap();
        FittedIntensity::new(stack, mu, DomainBounds::unit(1))
    }

    fn tiny_config() -> FitConfig {
        FitConfig {
            n_layers: 1,
            kind: SublayerKind::Naf { m: 2 },
            cond_hidden: 2,
            learning_rate: 1e-2,
            iterations: 3,
            batch: Batch::Full,
            ..FitConfig::default()
        }
    }

    fn pattern(n: usize) -> PointPattern {
        let coords = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        PointPattern::new(1, coords, DomainBounds::unit(1)).unwrap()
    }

    #[test]
    fn rejects_small_b() {
        assert_eq!(
            bootstrap_fit(&pattern(20), 1, &tiny_config(), 0).unwrap_err(),
            BootstrapError::TooFewReplicates(1)
        );
    }

    #[test]
    fn counts_have_poisson_mean_and_are_reproducible() {
        let p = pattern(50);
        let e = bootstrap_fit(&p, 200, &tiny_config(), 7).unwrap();
        let mean = e.counts.iter().sum::<usize>() as f64 / 200.0;
        assert!((mean - 50.0).abs() <= 3.0 * (50.0f64 / 200.0).sqrt(), "{mean}");
        assert!(e.failures.is_empty());
        for (m, &c) in e.replicates.iter().zip(&e.counts) {
            assert_eq!(m.mu_hat, c as f64);
        }
        let again = bootstrap_fit(&p, 200, &tiny_config(), 7).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn se_of_two_constants() {
        let e = BootstrapEnsemble::from_replicates(vec![constant_model(400.0), constant_model(600.0)], DomainBounds::unit(1), 0)
            .unwrap();
        let se = e.se_surface(10).unwrap();
        let mean = e.mean_surface(10).unwrap();
        // both replicates share the same density r(x): values 400 r and 600 r
        for (s, m) in se.values.iter().zip(&mean.values) {
            let r = m / 500.0;
            assert!((s - 100.0 * 2f64.sqrt() * r).abs() < 1e-9 * s.max(1.0));
        }
        let flat = vec![
            GridSurface { lo: vec![0.0], hi: vec![1.0], resolution: vec![3], values: vec![400.0; 3] },
            GridSurface { lo: vec![0.0], hi: vec![1.0], resolution: vec![3], values: vec![600.0; 3] },
        ];
        for v in sd_of(&flat).values {
            assert!((v - 141.42).abs() < 0.01);
        }
    }

    #[test]
    fn identical_replicates_have_zero_se() {
        let e = BootstrapEnsemble::from_replicates(vec![constant_model(300.0); 4], DomainBounds::unit(1), 0).unwrap();
        assert!(e.se_surface(20).unwrap().values.iter().all(|&v| v == 0.0));
        let ex = e.exceedance_surface(250.0, 20).unwrap();
        assert!(ex.values.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn exceedance_extremes_and_monotonicity() {
        let e = BootstrapEnsemble::from_replicates(
            vec![constant_model(200.0), constant_model(500.0), constant_model(900.0)],
            DomainBounds::unit(1),
            0,
        )
        .unwrap();
        assert!(e.exceedance_surface(0.0, 25).unwrap().values.iter().all(|&v| v == 1.0));
        assert!(e.exceedance_surface(1e18, 25).unwrap().values.iter().all(|&v| v == 0.0));
        let thresholds = [1.0, 100.0, 300.0, 700.0, 1500.0];
        let surfaces: Vec<_> = thresholds.iter().map(|&t| e.exceedance_surface(t, 25).unwrap()).collect();
        for w in surfaces.windows(2) {
            assert!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| a >= b));
        }
        assert!(e.exceedance_surface(-1.0, 5).is_err());
    }

    #[test]
    fn se_ignores_replicate_order() {
        let models = vec![constant_model(200.0), constant_model(500.0), constant_model(900.0)];
        let mut rev = models.clone();
        rev.reverse();
        let a = BootstrapEnsemble::from_replicates(models, DomainBounds::unit(1), 0).unwrap();
        let b = BootstrapEnsemble::from_replicates(rev, DomainBounds::unit(1), 0).unwrap();
        let (sa, sb) = (a.se_surface(30).unwrap(), b.se_surface(30).unwrap());
        for (x, y) in sa.values.iter().zip(&sb.values) {
            assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn failures_block_surfaces() {
        let mut e = BootstrapEnsemble::from_replicates(vec![constant_model(300.0); 9], DomainBounds::unit(1), 0).unwrap();
        e.counts.push(5);
        e.failures.push(ReplicateFailure {
            index: 9,
            count: 5,
            error: FitError::OutsideDomain,
        });
        assert!(e.se_surface(5).is_ok());
        e.counts.push(5);
        assert!(matches!(e.se_surface(5), Err(BootstrapError::TooManyFailures { succeeded: 9, requested: 11 })));
    }
}
