//! Adaptive (model-averaged) versus model-selection variational posteriors,
//! and the exact risk-bound functional for posteriors on finite atom sets.

use serde::{Deserialize, Serialize};

use crate::error::{AvbError, Result};
use crate::vb::{
    elbo_of_combination, kl_categorical, log_sum_exp, CombinedPosterior, ModelCollection, ModelId,
};

/// The model-selection variational posterior: the single component with the
/// largest posterior model weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Position of the selected model in the combined posterior.
    pub selected: usize,
    pub selected_model: ModelId,
    /// `E_m - log alpha_m` per model; the selected model minimizes it.
    pub scores: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Selects `argmin_m (E_m - log alpha_m)`, equivalently `argmax gamma_m`.
/// Exact ties go to the smaller complexity, then to the earlier model.
pub fn select_model<S>(
    combined: &CombinedPosterior<S>,
    collection: &ModelCollection,
) -> Result<SelectionResult> {
    if combined.is_empty() {
        return Err(AvbError::Config(
            "cannot select from an empty posterior".into(),
        ));
    }
    let mut scores = Vec::with_capacity(combined.len());
    let mut complexity = Vec::with_capacity(combined.len());
    for (id, e) in combined.ids.iter().zip(&combined.per_model_elbo) {
        let pos = collection
            .position(id)
            .ok_or_else(|| AvbError::MissingModelFit(id.to_string()))?;
        scores.push(e.total - collection.log_alpha()[pos]);
        complexity.push(collection.models()[pos].complexity);
    }
    let selected = (1..scores.len()).fold(0, |best, m| {
        let better = scores[m] < scores[best]
            || (scores[m] == scores[best] && complexity[m] < complexity[best]);
        if better {
            m
        } else {
            best
        }
    });
    Ok(SelectionResult {
        selected,
        selected_model: combined.ids[selected].clone(),
        scores,
        gamma: combined.gamma.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub avb_objective: f64,
    pub msvb_objective: f64,
    pub holds: bool,
}

/// Objective of the averaged posterior against that of the selected
/// component (as a member of the full collection, `E_m - log alpha_m`).
pub fn objective_dominance<S>(
    combined: &CombinedPosterior<S>,
    collection: &ModelCollection,
    selection: &SelectionResult,
) -> Result<Dominance> {
    let restricted;
    let coll = if combined.ids.iter().eq(collection.ids()) {
        collection
    } else {
        let keep: Vec<usize> = combined
            .ids
            .iter()
            .map(|id| {
                collection
                    .position(id)
                    .ok_or_else(|| AvbError::MissingModelFit(id.to_string()))
            })
            .collect::<Result<_>>()?;
        restricted = collection.restrict(&keep)?;
        &restricted
    };
    let avb = elbo_of_combination(coll, &combined.gamma, &combined.totals())?;
    let m = selection.selected;
    let msvb = combined.per_model_elbo[m].total - coll.log_alpha()[m];
    Ok(Dominance {
        avb_objective: avb,
        msvb_objective: msvb,
        holds: avb <= msvb + 1e-10,
    })
}

/// Total variation between the averaged posterior and the selected
/// component; with disjoint supports this is `1 - gamma_selected`.
pub fn tv_combined_vs_selected<S>(
    combined: &CombinedPosterior<S>,
    selection: &SelectionResult,
) -> f64 {
    1.0 - combined.gamma[selection.selected]
}

/// 41 log-spaced values on `[1e-3, 1e3]`.
pub fn default_upsilon_grid() -> Vec<f64> {
    (0..41)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 40.0))
        .collect()
}

/// `E_Xi[n d^2]` on a finite atom set.
pub fn exact_risk(xi: &[f64], n_d2: &[f64]) -> Result<f64> {
    if xi.len() != n_d2.len() {
        return Err(AvbError::shape("risk per atom", xi.len(), n_d2.len()));
    }
    Ok(xi
        .iter()
        .zip(n_d2)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, r)| w * r)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBound {
    pub value: f64,
    /// Grid point attaining the minimum.
    pub upsilon: f64,
}

/// `min_u (1/u) [KL(Xi, posterior) + log E_posterior exp(u n d^2)]` over the
/// grid, an upper bound on `E_Xi[n d^2]` for every `u > 0`. The exponential
/// moment is accumulated in log space.
pub fn risk_bound_functional(
    posterior: &[f64],
    xi: &[f64],
    n_d2: &[f64],
    upsilon_grid: &[f64],
) -> Result<RiskBound> {
    if posterior.len() != xi.len() || n_d2.len() != xi.len() {
        return Err(AvbError::shape("atom measures", posterior.len(), xi.len()));
    }
    if upsilon_grid.is_empty() || upsilon_grid.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
        return Err(AvbError::Config(
            "the upsilon grid must be nonempty and positive".into(),
        ));
    }
    let kl = kl_categorical(xi, posterior)?;
    let mut best = RiskBound {
        value: f64::INFINITY,
        upsilon: upsilon_grid[0],
    };
    let mut terms = Vec::with_capacity(posterior.len());
    for &u in upsilon_grid {
        terms.clear();
        terms.extend(
            posterior
                .iter()
                .zip(n_d2)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, r)| p.ln() + u * r),
        );
        let value = (kl + log_sum_exp(&terms)) / u;
        if value < best.value {
            best = RiskBound { value, upsilon: u };
        }
    }
    Ok(best)
}
