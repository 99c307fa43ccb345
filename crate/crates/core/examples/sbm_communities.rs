use avb::quasi::{fit_sbm_grid, planted_partition, SbmConfig};

fn main() -> avb::Result<()> {
    let (graph, truth) = planted_partition(60, 3, 0.8, 0.1, 21)?;
    println!("{} nodes, {} edges", graph.n(), graph.edge_count());

    let ms = [1, 2, 3, 4, 5];
    let fit = fit_sbm_grid(&graph, &ms, &SbmConfig { seed: 21, ..SbmConfig::default() })?;
    for (i, id) in fit.combined.ids.iter().enumerate() {
        println!(
            "{id}: objective {:>8.2}  log gamma {:>10.2}",
            fit.combined.per_model_elbo[i].total, fit.combined.log_gamma[i]
        );
    }

    let best = fit
        .combined
        .gamma
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let labels = fit.combined.components[best].hard_labels();
    // agreement up to relabeling: count pairs placed together or apart consistently
    let mut agree = 0;
    let mut pairs = 0;
    for i in 0..truth.len() {
        for j in 0..i {
            pairs += 1;
            agree += ((truth[i] == truth[j]) == (labels[i] == labels[j])) as usize;
        }
    }
    println!("\npair agreement with the planted partition: {:.3}", agree as f64 / pairs as f64);
    Ok(())
}
