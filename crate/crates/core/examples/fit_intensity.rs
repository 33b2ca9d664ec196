//! Fit a flow intensity to a simulated one-dimensional pattern, compare it
//! with a kernel estimate, and save the model.
//!
//! cargo run --release --example fit_intensity [iterations]

use nhpp_flow::evalkit::{kde_fit, l2_distance};
use nhpp_flow::io::save_model;
use nhpp_flow::simulate::BuiltinIntensity;
use nhpp_flow::{fit, FitConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(2000), |s| s.parse())?;
    let truth = BuiltinIntensity::Lambda1;
    let data = truth.generate(7)?;
    println!("{} points from {truth}", data.len());

    let config = FitConfig {
        learning_rate: 1e-3,
        iterations,
        seed: 7,
        ..FitConfig::default()
    };
    let model = fit(&data, &config)?;
    println!(
        "objective {:.2} -> {:.2}",
        model.fit_trace[0], model.final_objective
    );

    let domain = truth.domain();
    let flow = l2_distance(|x| model.intensity_or_zero(x).unwrap(), |x| truth.eval(x), &domain, 1000);
    let kde = kde_fit(&data)?;
    let base = l2_distance(|x| kde.intensity_at(x), |x| truth.eval(x), &domain, 1000);
    println!("L2 to the truth: flow {flow:.1}, KDE {base:.1}");

    for x in [0.05, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9] {
        println!(
            "  x = {x:.2}  true {:7.1}  flow {:7.1}  kde {:7.1}",
            truth.eval(&[x]),
            model.intensity_at(&[x])?,
            kde.intensity_at(&[x])
        );
    }

    let path = std::env::temp_dir().join("lambda1_model.json");
    save_model(&path, &model)?;
    println!("saved {}", path.display());
    Ok(())
}
