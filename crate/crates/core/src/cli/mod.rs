//! The `nhpp` command line.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for data errors (files,
//! parsing, domains, too few points), 4 for numerical failures (divergence,
//! non-finite values, root finding). `NHPP_THREADS` sets the number of worker
//! threads used for bootstrap replicates and experiment repetitions.

pub mod experiment;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bootstrap::{bootstrap_fit, BootstrapError};
use crate::domain::{DomainBounds, DomainError, PointPattern};
use crate::estimate::{fit, Batch, FitConfig, FitError};
use crate::evalkit::{default_resolution, kde_fit, l2_distance, pit_ks, EvalError};
use crate::flow::SublayerKind;
use crate::grid::GridSurface;
use crate::io::{self, IoError};
use crate::simulate::{sample_fixed, sample_pattern, BuiltinIntensity, SimError};
use experiment::{run_experiment, table_intensity, ExperimentError, ExperimentSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const THREADS_ENV: &str = "NHPP_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Flow(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Config(_) => CliError::Usage(e.to_string()),
            FitError::InsufficientData { .. } | FitError::Domain(_) | FitError::OutsideDomain => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Domain(_) | SimError::BoundBelowSupremum { .. } | SimError::InvalidIntensity { .. } => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Flow(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BootstrapError> for CliError {
    fn from(e: BootstrapError) -> Self {
        match e {
            BootstrapError::Fit(f) => f.into(),
            BootstrapError::TooFewReplicates(_) | BootstrapError::Threshold(_) => CliError::Usage(e.to_string()),
            BootstrapError::InsufficientData(_) => CliError::Data(e.to_string()),
            BootstrapError::TooManyFailures { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Unknown(_) => CliError::Usage(e.to_string()),
            ExperimentError::Fit { source, .. } => CliError::from(source),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nhpp", about = "Poisson-process intensity estimation with triangular transport maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Family {
    Naf,
    Affine,
    Iaf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Table {
    Table1,
    Table2,
    Table3,
    Table4,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Point CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated column names; all columns when omitted.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Domain as lo1,hi1[,lo2,hi2...]; the data range when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bounds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long = "M", default_value_t = 64)]
    pub m: usize,
    #[arg(long, default_value_t = 64)]
    pub cond_width: usize,
    #[arg(long, value_enum, default_value_t = Family::Naf)]
    pub family: Family,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Minibatch size; full batch when omitted.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub padding: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an intensity to a point pattern and save the model.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw points from a fitted model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Exact number of points.
        #[arg(long, conflicts_with = "poisson", required_unless_present = "poisson")]
        n: Option<usize>,
        /// Draw the count from Poisson(mu_hat).
        #[arg(long)]
        poisson: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a benchmark intensity by thinning.
    Generate {
        #[arg(long)]
        intensity: BuiltinIntensity,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fitted intensity on a grid over its domain.
    Density {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap standard-error and exceedance surfaces.
    Bootstrap {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "B", default_value_t = 100)]
        b: usize,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_se: PathBuf,
        /// Rows `x1[,x2],threshold,value`, thresholds in the given order.
        #[arg(long)]
        out_exceed: PathBuf,
    },
    /// Kernel intensity estimate on a grid.
    Kde {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// L2 distance between a fitted model and a benchmark intensity.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: BuiltinIntensity,
        /// Cells per dimension; 1000 in one dimension and 256 otherwise.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Probability-integral-transform QQ pairs and KS statistic.
    Qq {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated benchmark study comparing flows of depth 1..5 with KDE.
    Experiment {
        #[arg(long, value_enum)]
        name: Table,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides for the benchmark fit settings (2000 steps; on the line
        /// step 1e-3, width 64, padding 0.01; on the square step 1e-4, width
        /// 32, padding 0.1).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        cond_width: Option<usize>,
        #[arg(long)]
        padding: Option<f64>,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        layers: Vec<usize>,
        /// Also write per-repetition distances here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl ModelArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            n_layers: self.layers,
            kind: match self.family {
                Family::Naf => SublayerKind::Naf { m: self.m },
                Family::Affine => SublayerKind::AffineAutoregressive,
                Family::Iaf => SublayerKind::InverseAutoregressive,
            },
            cond_hidden: self.cond_width,
            learning_rate: self.lr,
            iterations: self.iters,
            batch: self.batch.map_or(Batch::Full, Batch::Minibatch),
            seed,
            padding: self.padding,
        }
    }
}

fn parse_bounds(flat: &[f64]) -> Result<DomainBounds, CliError> {
    if flat.is_empty() || !flat.len().is_multiple_of(2) {
        return Err(CliError::Usage("--bounds takes pairs lo,hi per dimension".into()));
    }
    let lo = flat.iter().step_by(2).copied().collect();
    let hi = flat.iter().skip(1).step_by(2).copied().collect();
    Ok(DomainBounds::new(lo, hi)?)
}

fn read_input(args: &InputArgs) -> Result<PointPattern, CliError> {
    let cols = args.columns.as_deref();
    Ok(match &args.bounds {
        Some(b) => io::parse_points_in(&args.input, cols, parse_bounds(b)?)?,
        None => io::parse_points(&args.input, cols)?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(io::write_atomic(path, text.as_bytes())?)
}

fn model_surface(model: &crate::estimate::FittedIntensity, grid: usize) -> Result<GridSurface, CliError> {
    let mut failure = None;
    let s = GridSurface::over_bounds(&model.bounds, grid, |x| {
        model.intensity_at(x).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(s),
    }
}

/// Executes one parsed command; returns the text printed on success.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Fit { input, model, seed, out } => {
            let pattern = read_input(&input)?;
            let fitted = fit(&pattern, &model.config(seed))?;
            io::save_model(&out, &fitted)?;
            Ok(format!(
                "fitted {} points, final objective {}\n",
                pattern.len(),
                fitted.final_objective
            ))
        }
        Command::Simulate {
            model,
            n,
            poisson,
            seed,
            out,
        } => {
            let m = io::load_model(&model)?;
            let pattern = match (n, poisson) {
                (Some(n), false) => sample_fixed(&m, n, seed)?,
                _ => sample_pattern(&m, seed)?,
            };
            io::write_points(&out, &pattern)?;
            Ok(format!("{} points\n", pattern.len()))
        }
        Command::Generate { intensity, seed, out } => {
            let pattern = intensity.generate(seed)?;
            io::write_points(&out, &pattern)?;
            Ok(format!("{} points\n", pattern.len()))
        }
        Command::Density { model, grid, out } => {
            if grid == 0 {
                return Err(CliError::Usage("--grid must be positive".into()));
            }
            let m = io::load_model(&model)?;
            io::write_surface(&out, &model_surface(&m, grid)?)?;
            Ok(String::new())
        }
        Command::Bootstrap {
            input,
            model,
            b,
            grid,
            thresholds,
            seed,
            out_se,
            out_exceed,
        } => {
            if grid == 0 {
                return Err(CliError::Usage("--grid must be positive".into()));
            }
            let pattern = read_input(&input)?;
            let ensemble = bootstrap_fit(&pattern, b, &model.config(seed), seed)?;
            let surfaces = ensemble.replicate_surfaces(grid)?;
            let se = ensemble.se_surface(grid)?;
            io::write_surface(&out_se, &se)?;
            let header: String = (1..=pattern.dim()).map(|k| format!("x{k},")).collect();
            let mut text = format!("{header}threshold,value\n");
            for &t in &thresholds {
                if !(t >= 0.0) {
                    return Err(BootstrapError::Threshold(t).into());
                }
                let ex = crate::bootstrap::exceedance_of(&surfaces, t);
                for (c, v) in ex.centers().zip(&ex.values) {
                    for x in &c {
                        text.push_str(&format!("{x},"));
                    }
                    text.push_str(&format!("{t},{v}\n"));
                }
            }
            write_text(&out_exceed, &text)?;
            Ok(format!(
                "{} of {} replicates succeeded ({} count redraws)\n",
                ensemble.replicates.len(),
                b,
                ensemble.redraws
            ))
        }
        Command::Kde { input, grid, out } => {
            if grid == 0 {
                return Err(CliError::Usage("--grid must be positive".into()));
            }
            let pattern = read_input(&input)?;
            let kde = kde_fit(&pattern)?;
            let s = GridSurface::over_bounds(pattern.bounds(), grid, |x| kde.intensity_at(x));
            io::write_surface(&out, &s)?;
            Ok(String::new())
        }
        Command::Evaluate { model, truth, grid } => {
            let m = io::load_model(&model)?;
            if m.dim() != truth.dim() {
                return Err(CliError::Data(format!(
                    "model has dimension {}, {} has dimension {}",
                    m.dim(),
                    truth,
                    truth.dim()
                )));
            }
            let res = grid.unwrap_or_else(|| default_resolution(truth.dim()));
            let mut failure = None;
            let l2 = l2_distance(
                |x| {
                    m.intensity_or_zero(x).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        f64::NAN
                    })
                },
                |x| truth.eval(x),
                &truth.domain(),
                res,
            );
            if let Some(e) = failure {
                return Err(e.into());
            }
            Ok(format!("L2 {l2}\n"))
        }
        Command::Qq { model, input, out } => {
            let m = io::load_model(&model)?;
            let pattern = read_input(&input)?;
            let report = pit_ks(&m, &pattern)?;
            io::write_qq(&out, &report.qq_points)?;
            Ok(format!("KS {}\n", report.ks_statistic))
        }
        Command::Experiment {
            name,
            reps,
            seed,
            iters,
            lr,
            m,
            cond_width,
            padding,
            layers,
            out,
        } => {
            let label = match name {
                Table::Table1 => "table1",
                Table::Table2 => "table2",
                Table::Table3 => "table3",
                Table::Table4 => "table4",
            };
            if reps == 0 || layers.is_empty() || layers.contains(&0) {
                return Err(CliError::Usage("--reps and every layer count must be positive".into()));
            }
            let mut spec = ExperimentSpec::new(table_intensity(label)?, reps, seed);
            spec.layer_counts = layers;
            let base = &mut spec.base;
            base.iterations = iters.unwrap_or(base.iterations);
            base.learning_rate = lr.unwrap_or(base.learning_rate);
            if let Some(m) = m {
                base.kind = SublayerKind::Naf { m };
            }
            base.cond_hidden = cond_width.unwrap_or(base.cond_hidden);
            base.padding = padding.unwrap_or(base.padding);
            spec.base.validate()?;
            let result = run_experiment(&spec)?;
            if let Some(path) = out {
                let mut text = String::from("rep,n");
                for n in &spec.layer_counts {
                    text.push_str(&format!(",flow_n{n}"));
                }
                text.push_str(",kde\n");
                for (i, r) in result.reps.iter().enumerate() {
                    text.push_str(&format!("{i},{}", r.n_points));
                    for v in &r.flow_l2 {
                        text.push_str(&format!(",{v}"));
                    }
                    text.push_str(&format!(",{}\n", r.kde_l2));
                }
                write_text(&path, &text)?;
            }
            Ok(result.render())
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Usage(format!("{THREADS_ENV} must be positive")));
        }
        // a pool configured earlier in the process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv`, runs the command, prints results or errors, and returns
/// the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = configure_threads().and_then(|_| execute(cli));
    match outcome {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
