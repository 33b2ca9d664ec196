//! Simulate Poisson processes by thinning: the four benchmark intensities and
//! a user-supplied one.
//!
//! cargo run --release --example thinning

use nhpp_flow::simulate::{grid_supremum, thinning_generate, BuiltinIntensity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for truth in BuiltinIntensity::ALL {
        let counts: Vec<usize> = (0..20)
            .map(|s| truth.generate(s).map(|p| p.len()))
            .collect::<Result<_, _>>()?;
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        println!(
            "{truth}: d = {}, bound {}, integral {:.1}, mean count over 20 runs {mean:.1}",
            truth.dim(),
            truth.supremum(),
            truth.integral()
        );
    }

    // a bump on the unit square
    let bump = |x: &[f64]| 200.0 + 1500.0 * (-((x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2)) / 0.02).exp();
    let sup = grid_supremum(&bump, 2)?;
    let pattern = thinning_generate(bump, 2, 1.05 * sup, 9)?;
    let near = pattern
        .points()
        .filter(|p| (p[0] - 0.4).hypot(p[1] - 0.6) < 0.1)
        .count();
    println!(
        "bump: grid supremum {sup:.1}, {} points, {near} within 0.1 of the peak",
        pattern.len()
    );
    Ok(())
}
