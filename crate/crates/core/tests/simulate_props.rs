use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rome_core::simulate::{
    fit_base_forecaster, generate_panel, run_experiment, Design, ErrorDist, ExperimentOptions,
    GridPoint, MethodFamily, ScenarioSpec,
};
use rome_core::{Hierarchy, HierarchySpec};

fn single_series(alpha: f64, sigma: f64, t_total: usize) -> (ScenarioSpec, Hierarchy) {
    let hs = HierarchySpec::star(1).unwrap();
    let h = Hierarchy::build(&hs).unwrap();
    let mut spec = ScenarioSpec::uniform(hs, alpha, sigma, 0.0);
    spec.t_total = t_total;
    spec.t_train = t_total - spec.horizon;
    (spec, h)
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let lag1 = x
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / n;
    (mean, var, lag1 / var)
}

#[test]
fn ar_process_has_stationary_moments() {
    let (spec, h) = single_series(0.8, 0.5, 100_000);
    let panel = generate_panel(&spec, &h, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b: Vec<f64> = panel.y.row(1).iter().copied().collect();
    let (_, var, rho) = moments(&b);
    assert!((rho - 0.8).abs() <= 0.02, "lag-1 autocorrelation {rho}");
    let sd = 0.5 / (1.0f64 - 0.64).sqrt();
    assert!(
        (var.sqrt() / sd - 1.0).abs() <= 0.03,
        "sd {} vs {sd}",
        var.sqrt()
    );
}

#[test]
fn error_distributions_have_their_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = |d: ErrorDist, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..100_000).map(|_| d.draw(rng)).collect()
    };
    let mix = draws(ErrorDist::MixtureNormal, &mut rng);
    let (_, var, _) = moments(&mix);
    assert!((var / 1.8 - 1.0).abs() <= 0.05, "mixture variance {var}");

    let kurtosis = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        m4 / (m2 * m2)
    };
    let t = draws(ErrorDist::StudentT, &mut rng);
    let g = draws(ErrorDist::Gaussian, &mut rng);
    assert!(
        kurtosis(&t) > kurtosis(&g) + 1.0,
        "{} vs {}",
        kurtosis(&t),
        kurtosis(&g)
    );

    let mut c = draws(ErrorDist::Cauchy, &mut rng);
    c.sort_by(f64::total_cmp);
    let median = (c[49_999] + c[50_000]) / 2.0;
    assert!(median.abs() <= 0.05, "Cauchy median {median}");
}

#[test]
fn ar_estimates_scatter_around_the_truth() {
    // the standard error at T = 180 is about 0.06, so a few single seeds may
    // leave the band; the mean and the bulk must not
    let (spec, h) = single_series(0.6, 1.0, 192);
    let estimates: Vec<f64> = (0..200)
        .map(|seed| {
            let panel = generate_panel(&spec, &h, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let train: Vec<f64> = panel.train().row(1).iter().copied().collect();
            assert_eq!(train.len(), 180);
            fit_base_forecaster(&train, 12).unwrap().alpha
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 200.0;
    assert!((mean - 0.6).abs() <= 0.15, "mean alpha-hat {mean}");
    let inside = estimates
        .iter()
        .filter(|a| (**a - 0.6).abs() <= 0.15)
        .count();
    assert!(
        inside >= 190,
        "{inside} of 200 estimates within 0.6 +- 0.15"
    );
}

#[test]
fn reports_are_reproducible() {
    let mut opts = ExperimentOptions::new(Design::NonGaussian, 3, 99);
    opts.grid = vec![GridPoint::Distribution(ErrorDist::StudentT)];
    opts.families = vec![MethodFamily::Bu, MethodFamily::Ls, MethodFamily::Lad];
    let a = run_experiment(&opts).unwrap();
    let b = run_experiment(&opts).unwrap();
    assert_eq!(a, b);
    assert!(!a.rows.is_empty());
    opts.seed = 100;
    assert_ne!(run_experiment(&opts).unwrap().rows, a.rows);
}
