//! Bootstrap standard-error and exceedance surfaces for a two-dimensional fit.
//!
//! cargo run --release --example bootstrap_surfaces [replicates]

use nhpp_flow::bootstrap::bootstrap_fit;
use nhpp_flow::evalkit::spearman;
use nhpp_flow::simulate::BuiltinIntensity;
use nhpp_flow::{FitConfig, SublayerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let b = std::env::args().nth(1).map_or(Ok(20), |s| s.parse())?;
    let data = BuiltinIntensity::Lambda3.generate(5)?;
    let config = FitConfig {
        n_layers: 2,
        kind: SublayerKind::Naf { m: 16 },
        cond_hidden: 16,
        learning_rate: 3e-3,
        iterations: 300,
        ..FitConfig::default()
    };
    let ensemble = bootstrap_fit(&data, b, &config, 5)?;
    println!(
        "{} of {b} replicates fitted, {} count redraws, counts {:?}",
        ensemble.replicates.len(),
        ensemble.redraws,
        &ensemble.counts[..ensemble.counts.len().min(8)]
    );

    let res = 30;
    let mean = ensemble.mean_surface(res)?;
    let se = ensemble.se_surface(res)?;
    println!(
        "Spearman(mean, SE) over the grid: {:.3}",
        spearman(&mean.values, &se.values)
    );
    for t in [800.0, 1200.0, 1600.0] {
        let ex = ensemble.exceedance_surface(t, res)?;
        let share = ex.values.iter().filter(|&&p| p >= 0.9).count() as f64 / ex.len() as f64;
        println!("P(lambda > {t}) >= 0.9 on {:.1}% of the grid", 100.0 * share);
    }
    Ok(())
}
