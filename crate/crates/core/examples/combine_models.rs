//! Combine per-model fits into one posterior over a model collection.
//!
//! The fits here are stand-ins: each model only carries its name and an
//! objective value. Any state type works as the component.

use avb::compare::{objective_dominance, select_model};
use avb::vb::elbo_of_combination;
use avb::{combine_posteriors, ElboBreakdown, ModelCollection, ModelEntry, ModelId};

fn main() -> avb::Result<()> {
    let entries: Vec<ModelEntry> = (1..=4)
        .map(|k| ModelEntry {
            id: ModelId::new(format!("order{k}")),
            complexity: k as f64,
        })
        .collect();
    // log prior weight -b0 * L * scale * complexity^2
    let collection = ModelCollection::from_complexity(entries, 0.05, 1.0, 1.0)?;

    // expected negative log-likelihood and KL for each fitted model
    let fits = [(41.0, 1.2), (33.5, 2.9), (32.8, 4.1), (32.6, 6.0)];
    let combined = combine_posteriors(
        &collection,
        collection
            .ids()
            .zip(fits)
            .map(|(id, (nll, kl))| (id.clone(), id.to_string(), ElboBreakdown::exact(nll, kl)))
            .collect::<Vec<_>>(),
    )?;

    println!("{:<8} {:>8} {:>10} {:>8}", "model", "alpha", "objective", "gamma");
    for (i, id) in combined.ids.iter().enumerate() {
        println!(
            "{:<8} {:>8.4} {:>10.3} {:>8.4}",
            id.to_string(),
            collection.alpha()[i],
            combined.per_model_elbo[i].total,
            combined.gamma[i]
        );
    }

    let selection = select_model(&combined, &collection)?;
    let dominance = objective_dominance(&combined, &collection, &selection)?;
    println!("\nselected: {}", selection.selected_model);
    println!(
        "objective of the average {:.4} <= objective of the selection {:.4}: {}",
        dominance.avb_objective, dominance.msvb_objective, dominance.holds
    );

    let e = elbo_of_combination(&collection, &combined.gamma, &combined.totals())?;
    println!("objective recomputed from gamma: {e:.4}");
    Ok(())
}
