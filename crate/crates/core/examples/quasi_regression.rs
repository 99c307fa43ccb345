//! Tempered Gaussian quasi-likelihood for regression with bounded,
//! non-Gaussian noise.

use rand::Rng;

use avb::deep::{fit_grid, FitConfig, LikelihoodAdapter, NetArchitecture, RegressionData};
use avb::quasi::{subgauss_inequality_check, NoiseModel};
use avb::rng::substream;

fn main() -> avb::Result<()> {
    let noise = NoiseModel::Uniform { half_width: 0.3 };
    let proxy = noise.variance_proxy();
    let kappa = 0.5 / proxy;
    println!("uniform noise: variance proxy {proxy:.3}, kappa {kappa:.3}");

    let mut rng = substream(8, &[]);
    let f = |x: f64| (3.0 * x).cos();
    let x: Vec<f64> = (0..120).map(|_| rng.random()).collect();
    let y: Vec<f64> = x.iter().map(|&v| f(v) + noise.sample(&mut rng)).collect();

    // the moment inequality behind the tempering, checked by simulation
    let f_star: Vec<f64> = x.iter().take(10).map(|&v| f(v)).collect();
    let other: Vec<f64> = f_star.iter().map(|v| v + 0.4).collect();
    let check = subgauss_inequality_check(&other, &f_star, kappa, proxy, noise, 20_000, &mut rng)?;
    println!(
        "E[ratio] {:.4} vs bound {:.4} (std error {:.1e})",
        check.lhs, check.rhs, check.std_error
    );

    let adapter = LikelihoodAdapter::quasi_gaussian(RegressionData::new(1, x, y)?, kappa)?;
    let grid: Vec<NetArchitecture> = [2, 4, 8]
        .iter()
        .map(|&w| NetArchitecture::new(2, w, 1, 4.0))
        .collect::<avb::Result<_>>()?;
    let config = FitConfig { epochs: 200, lr: 1e-2, batch_size: Some(32), seed: 8, ..FitConfig::default() };
    let fit = fit_grid(&grid, &adapter, &config, 1e-3)?;
    for (i, id) in fit.combined.ids.iter().enumerate() {
        println!("{id}: gamma {:.4}", fit.combined.gamma[i]);
    }
    Ok(())
}
