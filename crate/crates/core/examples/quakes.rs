//! Earthquake epicentres off Fiji: fit a five-layer flow, check it with the
//! probability integral transform, and write the surfaces.
//!
//! cargo run --release --example quakes [iterations] [learning rate]

use std::path::Path;

use nhpp_flow::evalkit::pit_ks;
use nhpp_flow::grid::GridSurface;
use nhpp_flow::io::{parse_points, write_qq, write_surface};
use nhpp_flow::{fit, FitConfig, SublayerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(Ok(2000), |s| s.parse())?;
    let learning_rate = args.next().map_or(Ok(1e-3), |s| s.parse())?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/quakes.csv");
    let data = parse_points(&path, Some(&["long".into(), "lat".into()]))?;
    let b = data.bounds();
    println!(
        "{} events, long [{}, {}], lat [{}, {}]",
        data.len(),
        b.lo[0],
        b.hi[0],
        b.lo[1],
        b.hi[1]
    );

    let config = FitConfig {
        n_layers: 5,
        kind: SublayerKind::Naf { m: 32 },
        cond_hidden: 32,
        learning_rate,
        iterations,
        seed: 7,
        ..FitConfig::default()
    };
    let model = fit(&data, &config)?;
    let report = pit_ks(&model, &data)?;
    println!("KS statistic of the transformed events: {:.4}", report.ks_statistic);

    let out = std::env::temp_dir();
    let surface = GridSurface::over_bounds(&model.bounds, 100, |x| model.intensity_at(x).unwrap());
    write_surface(&out.join("quakes_intensity.csv"), &surface)?;
    write_qq(&out.join("quakes_qq.csv"), &report.qq_points)?;
    println!(
        "peak intensity {:.1} events per square degree; surfaces in {}",
        surface.values.iter().copied().fold(0.0, f64::max),
        out.display()
    );
    Ok(())
}
