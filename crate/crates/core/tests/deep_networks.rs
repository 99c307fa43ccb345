use rand::Rng;

use avb::deep::{
    fit_grid, forward, posterior_predictive_summary, FitConfig, LikelihoodAdapter, NetArchitecture, RegressionData,
};
use avb::rng::substream;

fn sine_adapter(n: usize, seed: u64) -> LikelihoodAdapter {
    let mut rng = substream(seed, &[]);
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    LikelihoodAdapter::gaussian(RegressionData::new(1, x, y).unwrap())
}

#[test]
fn parameter_lipschitz_bound_holds_on_random_pairs() {
    let mut rng = substream(3, &[]);
    for (k, m, d) in [(2, 3, 1), (3, 4, 2), (4, 2, 3)] {
        let arch = NetArchitecture::new(k, m, d, 1.5).unwrap();
        let l = arch.lipschitz_constant();
        for _ in 0..200 {
            let b = arch.bound;
            let a: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-b..b)).collect();
            let c: Vec<f64> = a
                .iter()
                .map(|v| (v + rng.random_range(-0.1..0.1)).clamp(-b, b))
                .collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            let diff = (forward(&arch, &a, &x).unwrap() - forward(&arch, &c, &x).unwrap()).abs();
            let dist = a.iter().zip(&c).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= l * dist + 1e-12, "{diff} > {l} * {dist}");
        }
    }
}

fn small_fit(seed: u64) -> avb::deep::GridFit {
    let grid = [NetArchitecture::new(2, 3, 1, 4.0).unwrap(), NetArchitecture::new(2, 5, 1, 4.0).unwrap()];
    let config = FitConfig {
        epochs: 40,
        lr: 1e-2,
        eval_samples: 64,
        seed,
        batch_size: Some(16),
        ..FitConfig::default()
    };
    fit_grid(&grid, &sine_adapter(64, 1), &config, 1e-3).unwrap()
}

#[test]
fn fitting_is_deterministic_per_seed() {
    let a = small_fit(7);
    let b = small_fit(7);
    assert_eq!(a.combined.gamma, b.combined.gamma);
    assert_eq!(a.traces, b.traces);
    let c = small_fit(8);
    assert_ne!(a.traces, c.traces);
}

#[test]
fn predictive_means_agree_within_their_standard_errors() {
    let fit = small_fit(11);
    let inputs: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
    let mut r1 = substream(1, &[]);
    let mut r2 = substream(2, &[]);
    let a = posterior_predictive_summary(&fit.combined, &inputs, 400, &mut r1).unwrap();
    let b = posterior_predictive_summary(&fit.combined, &inputs, 400, &mut r2).unwrap();
    let within = (0..inputs.len())
        .filter(|&i| {
            let se = (a.std_error[i].powi(2) + b.std_error[i].powi(2)).sqrt();
            (a.mean[i] - b.mean[i]).abs() <= 3.0 * se
        })
        .count();
    // a two-sided 3-sigma band covers 99.7% per point; allow a few misses
    assert!(within >= 190, "{within}/200");
}
