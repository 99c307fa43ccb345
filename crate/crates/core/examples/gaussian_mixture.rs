//! Variational Gaussian mixtures over a range of component counts, combined
//! into one posterior. The data come from a four-component mixture.

use avb::compare::select_model;
use avb::mixture::{fit_mixture_grid, sample_truth, CaviConfig};

fn main() -> avb::Result<()> {
    let data = sample_truth(400, 17);
    let ms: Vec<usize> = (1..=6).collect();
    let config = CaviConfig { seed: 17, ..CaviConfig::default() };
    let fit = fit_mixture_grid(&data, &ms, &config)?;

    println!("m   objective     gamma   sweeps");
    for (i, id) in fit.combined.ids.iter().enumerate() {
        println!(
            "{:<3} {:>10.2} {:>9.4} {:>8}",
            id.to_string().trim_start_matches('m'),
            fit.combined.per_model_elbo[i].total,
            fit.combined.gamma[i],
            fit.traces[i].len() - 1
        );
    }

    let sel = select_model(&fit.combined, &fit.collection)?;
    let best = &fit.combined.components[sel.selected];
    println!("\nselected {} with mixing weights:", sel.selected_model);
    for (k, w) in best.expected_weights().iter().enumerate() {
        let mean = &best.mean_factors[k].mean;
        println!("  {w:.3} at ({:+.2}, {:+.2})", mean[0], mean[1]);
    }
    Ok(())
}
