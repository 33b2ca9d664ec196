//! A small repeated study: flows of several depths against the kernel
//! estimate on a benchmark intensity.
//!
//! cargo run --release --example benchmark_study [lambda1|lambda2|lambda3|lambda4] [reps]

use nhpp_flow::cli::experiment::{run_experiment, ExperimentSpec};
use nhpp_flow::simulate::BuiltinIntensity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let truth: BuiltinIntensity = args.next().as_deref().unwrap_or("lambda2").parse()?;
    let reps = args.next().map_or(Ok(3), |s| s.parse())?;
    let mut spec = ExperimentSpec::new(truth, reps, 2024);
    spec.layer_counts = vec![1, 2, 4];
    let result = run_experiment(&spec)?;
    print!("{}", result.render());
    Ok(())
}
