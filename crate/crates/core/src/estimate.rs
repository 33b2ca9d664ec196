//! Maximum-likelihood fitting of the process density and the resulting
//! intensity estimate.
//!
//! With the integrated intensity profiled out at its optimum (the observed
//! count `n`), maximising the Poisson-process likelihood reduces to
//! minimising `-sum_i log rho(x_i)` over the transport-map parameters.
//! [`fit`] does this with adaptive-moment gradient steps and returns a
//! [`FittedIntensity`] evaluating `lambda(x) = n * rho(x)`.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::diffkit::GraphError;
use crate::domain::{DomainBounds, DomainError, PointPattern};
use crate::flow::{logit_embed, DensityGraph, FlowError, SublayerKind, TransportStack};
use crate::grid::centers;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("objective diverged at iteration {iteration}: {source}")]
    Divergence { iteration: usize, source: GraphError },
    #[error("non-finite objective at point {index}")]
    NonFiniteObjective { index: usize },
    #[error("point lies outside the model domain")]
    OutsideDomain,
    #[error("second intensity is not positive at grid node {node}")]
    NotAbsolutelyContinuous { node: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    Full,
    /// Minibatches of the given size, drawn without replacement per epoch.
    Minibatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_layers: usize,
    pub kind: SublayerKind,
    pub cond_hidden: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch: Batch,
    pub seed: u64,
    /// Fraction of each dimension's range added on both sides before mapping
    /// the data onto the unit cube.
    pub padding: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            kind: SublayerKind::Naf { m: 64 },
            cond_hidden: 64,
            learning_rate: 1e-4,
            iterations: 5000,
            batch: Batch::Full,
            seed: 0,
            padding: 0.01,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.to_string()));
        if self.n_layers == 0 {
            return bad("number of layers must be positive");
        }
        if self.cond_hidden == 0 {
            return bad("conditional-network width must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.iterations == 0 {
            return bad("iteration count must be positive");
        }
        if let Batch::Minibatch(0) = self.batch {
            return bad("minibatch size must be positive");
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return bad("padding must be a non-negative fraction");
        }
        self.kind.validate()?;
        Ok(())
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// A fitted transport map together with `mu_hat = n` and the domain mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedIntensity {
    pub stack: TransportStack,
    pub mu_hat: f64,
    /// Original-coordinate bounds; `padding` records how the unit cube was laid out.
    pub bounds: DomainBounds,
    /// Objective before each optimisation step.
    pub fit_trace: Vec<f64>,
    /// Objective after the last step.
    pub final_objective: f64,
    pub seed: u64,
}

impl FittedIntensity {
    pub fn new(stack: TransportStack, mu_hat: f64, bounds: DomainBounds) -> Self {
        Self {
            stack,
            mu_hat,
            bounds,
            fit_trace: Vec::new(),
            final_objective: f64::NAN,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.stack.dim()
    }

    /// Process density on the unit cube, in log scale.
    pub fn log_unit_density(&self, u: &[f64]) -> Result<f64, FitError> {
        Ok(self.stack.log_process_density(u)?)
    }

    /// `lambda(x) = mu_hat * rho(u(x)) / volume` for `x` in original coordinates.
    pub fn intensity_at(&self, x: &[f64]) -> Result<f64, FitError> {
        if !self.bounds.contains_padded(x) {
            return Err(FitError::OutsideDomain);
        }
        let mut u = vec![0.0; x.len()];
        self.bounds.to_unit(x, &mut u);
        let log_rho = self.stack.log_process_density(&u)?;
        Ok(self.mu_hat * log_rho.exp() / self.bounds.padded_volume())
    }

    /// Like [`FittedIntensity::intensity_at`] but zero outside the padded
    /// box, where the model places no mass.
    pub fn intensity_or_zero(&self, x: &[f64]) -> Result<f64, FitError> {
        match self.intensity_at(x) {
            Err(FitError::OutsideDomain) => Ok(0.0),
            other => other,
        }
    }

    /// Same model with the integrated intensity replaced.
    pub fn with_mu_hat(mut self, mu_hat: f64) -> Self {
        self.mu_hat = mu_hat;
        self
    }
}

/// Logit-embedded coordinates (row-major) and per-point log-Jacobians of a
/// unit-cube pattern.
pub(crate) fn embed_pattern(unit: &PointPattern) -> (Vec<f64>, Vec<f64>) {
    let mut ys = Vec::with_capacity(unit.coords().len());
    let mut jac = Vec::with_capacity(unit.len());
    for p in unit.points() {
        let e = logit_embed(p);
        ys.extend_from_slice(&e.y);
        jac.push(e.log_jac);
    }
    (ys, jac)
}

/// `-sum_i log rho(x_i)` for a pattern already on the unit cube.
pub fn nll_objective(stack: &TransportStack, unit: &PointPattern) -> Result<f64, FitError> {
    let mut total = 0.0;
    for (index, p) in unit.points().enumerate() {
        match stack.log_process_density(p) {
            Ok(v) => total -= v,
            Err(_) => return Err(FitError::NonFiniteObjective { index }),
        }
    }
    Ok(total)
}

/// Objective and its gradient with respect to the stack parameters, computed
/// through the differentiable graph.
pub fn nll_gradient(stack: &TransportStack, unit: &PointPattern) -> Result<(f64, Vec<f64>), FitError> {
    let (ys, jac) = embed_pattern(unit);
    let idx: Vec<usize> = (0..unit.len()).collect();
    let mut graph = DensityGraph::new(stack, unit.len().clamp(1, 64));
    let mut grad = vec![0.0; stack.params().len()];
    let v = graph
        .value_and_grad(stack.params().values(), &ys, &idx, &mut grad)
        .map_err(|_| first_bad_point(stack, unit))?;
    Ok((v - jac.iter().sum::<f64>(), grad))
}

fn first_bad_point(stack: &TransportStack, unit: &PointPattern) -> FitError {
    let index = unit
        .points()
        .position(|p| stack.log_process_density(p).is_err())
        .unwrap_or(0);
    FitError::NonFiniteObjective { index }
}

/// Fits the intensity of `pattern`.
///
/// The points are mapped onto the unit cube (with `config.padding`), the map
/// parameters are initialised from `config.seed`, and `config.iterations`
/// adaptive-moment steps are taken on the negative log-likelihood. The run is
/// deterministic for a given seed.
pub fn fit(pattern: &PointPattern, config: &FitConfig) -> Result<FittedIntensity, FitError> {
    config.validate()?;
    let n = pattern.len();
    if n < 2 {
        return Err(FitError::InsufficientData { needed: 2, got: n });
    }
    let (unit, bounds, _) = pattern.normalize(config.padding)?;
    let (ys, jac) = embed_pattern(&unit);
    let mut rng = rng::stream(config.seed, 0);
    let mut stack = TransportStack::random_init(
        pattern.dim(),
        config.n_layers,
        config.kind,
        config.cond_hidden,
        &mut rng,
    )?;
    let batch_size = match config.batch {
        Batch::Full => n,
        Batch::Minibatch(b) => b.min(n),
    };
    let mut graph = DensityGraph::new(&stack, batch_size.min(64));
    let mut adam = Adam::new(stack.params().len(), config.learning_rate);
    let mut grad = vec![0.0; stack.params().len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let batch: &[usize] = if batch_size == n {
            &order
        } else {
            if cursor + batch_size > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            cursor += batch_size;
            &order[cursor - batch_size..cursor]
        };
        grad.fill(0.0);
        let value = graph
            .value_and_grad(stack.params().values(), &ys, batch, &mut grad)
            .map_err(|source| FitError::Divergence { iteration, source })?;
        let value = value - batch.iter().map(|&i| jac[i]).sum::<f64>();
        trace.push(value);
        adam.step(stack.params_mut().values_mut(), &grad);
    }

    let all: Vec<usize> = (0..n).collect();
    let final_value = graph
        .value(stack.params().values(), &ys, &all)
        .map_err(|source| FitError::Divergence {
            iteration: config.iterations,
            source,
        })?
        - jac.iter().sum::<f64>();

    Ok(FittedIntensity {
        stack,
        mu_hat: n as f64,
        bounds,
        fit_trace: trace,
        final_objective: final_value,
        seed: config.seed,
    })
}

/// KL divergence between the Poisson processes with intensities `rho1` and
/// `rho2` on the box `bounds`:
/// `int (rho2 - rho1) + int rho1 log(rho1 / rho2)`, by the midpoint rule
/// with `resolution` cells per dimension.
pub fn kl_between<F, G>(rho1: F, rho2: G, bounds: &DomainBounds, resolution: usize) -> Result<f64, FitError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let res = vec![resolution; bounds.dim()];
    let cell = crate::grid::cell_volume(&bounds.lo, &bounds.hi, &res);
    let mut mass = 0.0;
    let mut cross = 0.0;
    for (node, c) in centers(&bounds.lo, &bounds.hi, &res).enumerate() {
        let a = rho1(&c);
        let b = rho2(&c);
        if !(b > 0.0) || !(a >= 0.0) {
            return Err(FitError::NotAbsolutelyContinuous { node });
        }
        mass += b - a;
        if a > 0.0 {
            cross += a * (a / b).ln();
        }
    }
    Ok((mass + cross) * cell)
}
