mod common;

use nhpp_flow::estimate::{fit, kl_between, FitConfig, FittedIntensity};
use nhpp_flow::evalkit::{kde_fit, ks_sorted, l2_distance};
use nhpp_flow::rng;
use nhpp_flow::simulate::{sample_fixed, BuiltinIntensity};
use nhpp_flow::{DomainBounds, PointPattern, SublayerKind, TransportStack};
use rand::Rng;

use common::{intensity_mass, median, QuadratureCdf};

fn small_config(seed: u64) -> FitConfig {
    FitConfig {
        n_layers: 2,
        kind: SublayerKind::Naf { m: 8 },
        cond_hidden: 8,
        learning_rate: 1e-2,
        iterations: 300,
        seed,
        ..FitConfig::default()
    }
}

fn lambda1_model(seed: u64) -> (PointPattern, FittedIntensity) {
    let data = BuiltinIntensity::Lambda1.generate(seed).unwrap();
    let model = fit(&data, &small_config(seed)).unwrap();
    (data, model)
}

#[test]
fn fitted_intensity_integrates_to_count() {
    let (data, model) = lambda1_model(11);
    let mass = intensity_mass(&model, 20_000);
    let n = data.len() as f64;
    assert!((mass - n).abs() <= 0.02 * n, "mass {mass} vs n {n}");
    assert_eq!(model.mu_hat, n);
}

#[test]
fn fit_objective_falls_in_median() {
    for seed in [1, 2, 3] {
        let (_, model) = lambda1_model(seed);
        let tr = &model.fit_trace;
        let k = tr.len() / 10;
        let early = median(&tr[..k]);
        let late = median(&tr[tr.len() - k..]);
        assert!(late <= early, "seed {seed}: {late} > {early}");
        assert!(model.final_objective <= tr[0]);
    }
}

#[test]
fn two_dimensional_model_integrates_to_count() {
    let data = BuiltinIntensity::Lambda3.generate(4).unwrap();
    let cfg = FitConfig {
        iterations: 100,
        ..small_config(4)
    };
    let model = fit(&data, &cfg).unwrap();
    let mass = intensity_mass(&model, 256);
    let n = data.len() as f64;
    assert!((mass - n).abs() <= 0.02 * n, "mass {mass} vs n {n}");
}

#[test]
fn changing_bounds_is_affine_equivariant() {
    // same stack, domains related by x -> 4x - 8
    let mut r = rng::stream(5, 0);
    let stack = TransportStack::random_init(2, 2, SublayerKind::Naf { m: 4 }, 6, &mut r).unwrap();
    let a = FittedIntensity::new(stack.clone(), 300.0, DomainBounds::unit(2).with_padding(0.01).unwrap());
    let b_bounds = DomainBounds::new(vec![-8.0, -8.0], vec![-4.0, -4.0])
        .unwrap()
        .with_padding(0.01)
        .unwrap();
    let b = FittedIntensity::new(stack, 300.0, b_bounds);
    for _ in 0..200 {
        let x = [r.random::<f64>(), r.random::<f64>()];
        let y = [4.0 * x[0] - 8.0, 4.0 * x[1] - 8.0];
        let la = a.intensity_at(&x).unwrap();
        let lb = b.intensity_at(&y).unwrap() * 16.0;
        assert!((la - lb).abs() <= 1e-10 * la, "{la} vs {lb}");
    }
}

#[test]
fn refitting_rescaled_data_rescales_the_intensity() {
    let data = BuiltinIntensity::Lambda1.generate(6).unwrap();
    let scaled: Vec<f64> = data.coords().iter().map(|&x| 4.0 * x - 8.0).collect();
    let scaled = PointPattern::new(1, scaled, DomainBounds::new(vec![-8.0], vec![-4.0]).unwrap()).unwrap();
    let cfg = FitConfig {
        iterations: 100,
        ..small_config(6)
    };
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&scaled, &cfg).unwrap();
    for i in 0..100 {
        let x = (i as f64 + 0.5) / 100.0;
        let la = a.intensity_at(&[x]).unwrap();
        let lb = b.intensity_at(&[4.0 * x - 8.0]).unwrap() * 4.0;
        assert!((la - lb).abs() <= 1e-10 * la, "{x}: {la} vs {lb}");
    }
}

#[test]
fn kl_grid_matches_refined_grid() {
    let l1 = |x: &[f64]| BuiltinIntensity::Lambda1.eval(x);
    let c = |_: &[f64]| 500.0;
    let unit = DomainBounds::unit(1);
    let coarse = kl_between(l1, c, &unit, 10_000).unwrap();
    let fine = kl_between(l1, c, &unit, 1_000_000).unwrap();
    assert!(((coarse - fine) / fine).abs() <= 1e-3, "{coarse} vs {fine}");
    assert_eq!(kl_between(l1, l1, &unit, 10_000).unwrap(), 0.0);
}

#[test]
fn uniform_fit_beats_kernel_estimate() {
    let mut r = rng::stream(21, 0);
    let coords: Vec<f64> = (0..2000).map(|_| r.random::<f64>()).collect();
    let data = PointPattern::new(1, coords, DomainBounds::unit(1)).unwrap();
    let cfg = FitConfig {
        n_layers: 2,
        learning_rate: 1e-3,
        iterations: 2000,
        seed: 21,
        ..FitConfig::default()
    };
    let model = fit(&data, &cfg).unwrap();
    let unit = DomainBounds::unit(1);
    let flow = l2_distance(|x| model.intensity_or_zero(x).unwrap(), |_| 2000.0, &unit, 1000);
    let kde = kde_fit(&data).unwrap();
    let base = l2_distance(|x| kde.intensity_at(x), |_| 2000.0, &unit, 1000);
    assert!(flow < base, "flow {flow} vs kde {base}");
}

#[test]
fn samples_follow_the_fitted_distribution() {
    let (_, model) = lambda1_model(8);
    let cdf = QuadratureCdf::new(&model, 20_000);
    let sample = sample_fixed(&model, 5000, 3).unwrap();
    let mut xs = sample.coords().to_vec();
    xs.sort_by(f64::total_cmp);
    let ks = ks_sorted(&xs, |x| cdf.eval(x));
    assert!(ks <= 0.03, "KS {ks}");
}

#[test]
fn fitting_is_deterministic() {
    let data = BuiltinIntensity::Lambda2.generate(2).unwrap();
    let cfg = FitConfig {
        iterations: 50,
        ..small_config(2)
    };
    assert_eq!(fit(&data, &cfg).unwrap(), fit(&data, &cfg).unwrap());
}
