//! Draw new patterns from a fitted model by inverting the triangular map.
//!
//! cargo run --release --example simulate_from_model

use nhpp_flow::flow::logit_embed;
use nhpp_flow::simulate::{invert_stack, sample_fixed, sample_pattern, BuiltinIntensity, RootFindSpec};
use nhpp_flow::{fit, FitConfig, SublayerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = BuiltinIntensity::Lambda3.generate(3)?;
    let config = FitConfig {
        n_layers: 2,
        kind: SublayerKind::Naf { m: 16 },
        cond_hidden: 16,
        learning_rate: 3e-3,
        iterations: 400,
        seed: 3,
        ..FitConfig::default()
    };
    let model = fit(&data, &config)?;
    println!("fitted {} points in two dimensions", data.len());

    // the inverse recovers the embedded point from its image
    let y = logit_embed(&[0.3, 0.8]).y;
    let (z, log_det) = model.stack.forward(&y)?;
    let back = invert_stack(&model.stack, &z, &RootFindSpec::default())?;
    println!("y = {y:?}\nz = {z:?} (log det {log_det:.4})\nrecovered {back:?}");

    let fixed = sample_fixed(&model, 5, 11)?;
    println!("five draws:");
    for p in fixed.points() {
        println!("  ({:.4}, {:.4})", p[0], p[1]);
    }

    // a full realisation: Poisson(mu_hat) count, then the points
    for seed in 0..3 {
        let pattern = sample_pattern(&model, seed)?;
        println!("realisation {seed}: {} points", pattern.len());
    }
    Ok(())
}
