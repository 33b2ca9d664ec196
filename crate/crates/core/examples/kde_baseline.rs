//! The kernel baseline: Silverman bandwidths, boundary bias, L2 distances.
//!
//! cargo run --release --example kde_baseline

use nhpp_flow::evalkit::{default_resolution, kde_fit, l2_distance};
use nhpp_flow::simulate::BuiltinIntensity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for truth in BuiltinIntensity::ALL {
        let data = truth.generate(1)?;
        let kde = kde_fit(&data)?;
        let res = default_resolution(truth.dim());
        let l2 = l2_distance(|x| kde.intensity_at(x), |x| truth.eval(x), &truth.domain(), res);
        println!(
            "{truth}: n = {}, bandwidths {:?}, L2 {l2:.1}",
            data.len(),
            kde.bandwidths.iter().map(|h| format!("{h:.4}")).collect::<Vec<_>>()
        );
    }

    // no boundary correction: mass leaks past the edges
    let truth = BuiltinIntensity::Lambda2;
    let kde = kde_fit(&truth.generate(2)?)?;
    for x in [0.0, 0.02, 0.1, 0.5] {
        println!("constant 500 at x = {x:.2}: KDE {:.1}", kde.intensity_at(&[x]));
    }
    Ok(())
}
