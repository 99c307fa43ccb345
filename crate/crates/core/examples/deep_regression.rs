use rand::Rng;

use avb::compare::select_model;
use avb::deep::{fit_grid, posterior_mean_predict, FitConfig, LikelihoodAdapter, NetArchitecture, RegressionData};
use avb::rng::substream;

fn truth(x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * x).sin()
}

fn main() -> avb::Result<()> {
    let mut rng = substream(5, &[]);
    let n = 200;
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y: Vec<f64> = x.iter().map(|&v| truth(v) + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let adapter = LikelihoodAdapter::gaussian(RegressionData::new(1, x, y)?);

    let bound = 4.0;
    let mut grid = Vec::new();
    for depth in [2, 3] {
        for width in [4, 8] {
            grid.push(NetArchitecture::new(depth, width, 1, bound)?);
        }
    }
    let config = FitConfig {
        epochs: 300,
        lr: 1e-2,
        batch_size: Some(32),
        seed: 5,
        ..FitConfig::default()
    };
    let fit = fit_grid(&grid, &adapter, &config, 1e-3)?;
    for (i, id) in fit.combined.ids.iter().enumerate() {
        let c = &fit.combined.components[i];
        println!(
            "{id}: objective {:>9.2}  gamma {:.4}  mean box half-width {:.3}",
            fit.combined.per_model_elbo[i].total,
            fit.combined.gamma[i],
            c.state.mean_width() / 2.0
        );
    }

    let inputs: Vec<Vec<f64>> = (0..=10).map(|i| vec![i as f64 / 10.0]).collect();
    let avb = posterior_mean_predict(&fit.combined, &inputs, 200, &mut substream(5, &[1]))?;
    let sel = select_model(&fit.combined, &fit.collection)?;
    let msvb = posterior_mean_predict(&fit.combined.clone().point_mass(sel.selected), &inputs, 200, &mut substream(5, &[2]))?;
    println!("\n   x   truth   averaged   selected ({})", sel.selected_model);
    for ((x, a), m) in inputs.iter().zip(&avb).zip(&msvb) {
        println!("{:>4.1} {:>7.3} {:>10.3} {:>10.3}", x[0], truth(x[0]), a, m);
    }
    Ok(())
}
