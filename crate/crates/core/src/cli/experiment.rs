//! Repeated benchmark studies: simulate from a closed-form intensity, fit
//! flows of several depths and a kernel estimate, and compare each with the
//! truth in L2.

use std::fmt::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::estimate::{fit, FitConfig, FitError};
use crate::evalkit::{default_resolution, kde_fit, l2_distance, EvalError};
use crate::flow::SublayerKind;
use crate::rng::child_seed;
use crate::simulate::{BuiltinIntensity, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("unknown experiment '{0}' (expected table1..table4)")]
    Unknown(String),
    #[error("repetition {rep}: {source}")]
    Simulation { rep: usize, source: SimError },
    #[error("repetition {rep}, {layers} layers: {source}")]
    Fit { rep: usize, layers: usize, source: FitError },
    #[error("repetition {rep}: {source}")]
    Kde { rep: usize, source: EvalError },
}

/// Benchmark intensity behind each table name.
pub fn table_intensity(name: &str) -> Result<BuiltinIntensity, ExperimentError> {
    match name {
        "table1" => Ok(BuiltinIntensity::Lambda1),
        "table2" => Ok(BuiltinIntensity::Lambda2),
        "table3" => Ok(BuiltinIntensity::Lambda3),
        "table4" => Ok(BuiltinIntensity::Lambda4),
        other => Err(ExperimentError::Unknown(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub intensity: BuiltinIntensity,
    pub layer_counts: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Settings shared by every flow fit; `n_layers` and `seed` are
    /// overridden per fit.
    pub base: FitConfig,
    /// Cells per dimension of the L2 grid.
    pub grid: usize,
}

/// Fit settings for the benchmark studies, 2000 steps in both cases.
///
/// On the line the step size is raised to 1e-3 so the budget converges. On
/// the square the domain is enlarged by 10% per side, which softens the
/// density edge the map has to reproduce, and narrower networks at 1e-4 keep
/// the fit from chasing noise within the budget.
pub fn benchmark_config(dim: usize) -> FitConfig {
    let base = FitConfig {
        iterations: 2000,
        ..FitConfig::default()
    };
    if dim == 1 {
        FitConfig {
            learning_rate: 1e-3,
            ..base
        }
    } else {
        FitConfig {
            kind: SublayerKind::Naf { m: 32 },
            cond_hidden: 32,
            learning_rate: 1e-4,
            padding: 0.1,
            ..base
        }
    }
}

impl ExperimentSpec {
    pub fn new(intensity: BuiltinIntensity, reps: usize, seed: u64) -> Self {
        Self {
            intensity,
            layer_counts: (1..=5).collect(),
            reps,
            seed,
            base: benchmark_config(intensity.dim()),
            grid: default_resolution(intensity.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub n_points: usize,
    /// One entry per layer count.
    pub flow_l2: Vec<f64>,
    pub kde_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableResult {
    pub spec: ExperimentSpec,
    pub reps: Vec<RepResult>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

impl TableResult {
    pub fn flow_column(&self, i: usize) -> Vec<f64> {
        self.reps.iter().map(|r| r.flow_l2[i]).collect()
    }

    pub fn flow_summary(&self, i: usize) -> (f64, f64) {
        mean_sd(&self.flow_column(i))
    }

    pub fn kde_summary(&self) -> (f64, f64) {
        mean_sd(&self.reps.iter().map(|r| r.kde_l2).collect::<Vec<_>>())
    }

    /// Rows of means and standard deviations, one column per flow depth and
    /// one for the kernel estimate.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: {} repetitions, L2 distance to the true intensity",
            self.spec.intensity,
            self.reps.len()
        );
        let _ = write!(out, "{:<22}", "");
        for n in &self.spec.layer_counts {
            let _ = write!(out, "{:>10}", format!("N={n}"));
        }
        let _ = writeln!(out, "{:>10}", "KDE");
        let columns: Vec<(f64, f64)> = (0..self.spec.layer_counts.len())
            .map(|i| self.flow_summary(i))
            .chain(std::iter::once(self.kde_summary()))
            .collect();
        for (label, pick) in [("Average L2 distance", 0), ("Standard deviation", 1)] {
            let _ = write!(out, "{label:<22}");
            for c in &columns {
                let v = if pick == 0 { c.0 } else { c.1 };
                let _ = write!(out, "{v:>10.1}");
            }
            out.push('\n');
        }
        out
    }
}

fn run_rep(spec: &ExperimentSpec, rep: usize) -> Result<RepResult, ExperimentError> {
    let truth = spec.intensity;
    let data = truth
        .generate(child_seed(spec.seed, 2 * rep as u64))
        .map_err(|source| ExperimentError::Simulation { rep, source })?;
    let domain = truth.domain();
    let mut flow_l2 = Vec::with_capacity(spec.layer_counts.len());
    for &layers in &spec.layer_counts {
        let cfg = FitConfig {
            n_layers: layers,
            seed: child_seed(spec.seed, 2 * rep as u64 + 1),
            ..spec.base.clone()
        };
        let model = fit(&data, &cfg).map_err(|source| ExperimentError::Fit { rep, layers, source })?;
        let mut failure = None;
        let l2 = l2_distance(
            |x| {
                model.intensity_or_zero(x).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    f64::NAN
                })
            },
            |x| truth.eval(x),
            &domain,
            spec.grid,
        );
        if let Some(source) = failure {
            return Err(ExperimentError::Fit { rep, layers, source });
        }
        flow_l2.push(l2);
    }
    let kde = kde_fit(&data).map_err(|source| ExperimentError::Kde { rep, source })?;
    let kde_l2 = l2_distance(|x| kde.intensity_at(x), |x| truth.eval(x), &domain, spec.grid);
    Ok(RepResult {
        n_points: data.len(),
        flow_l2,
        kde_l2,
    })
}

/// Runs all repetitions, in parallel across repetitions.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<TableResult, ExperimentError> {
    let reps = (0..spec.reps)
        .into_par_iter()
        .map(|r| run_rep(spec, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TableResult {
        spec: spec.clone(),
        reps,
    })
}
