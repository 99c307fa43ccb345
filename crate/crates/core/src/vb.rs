//! Variational objective arithmetic shared by every model family.
//!
//! The objective stored everywhere is the quantity to *minimize*,
//! `E(Xi) = -E_Xi[log q(theta, Y)] + KL(Xi, Pi)`; the evidence lower bound is
//! its negation. When the parameter spaces of a model collection are disjoint,
//! the optimal variational posterior over the whole collection is the mixture
//! of per-model optima weighted by
//!
//! ```text
//! gamma_m = alpha_m exp(-E_m) / sum_m' alpha_m' exp(-E_m')
//! ```
//!
//! which [`combine_posteriors`] evaluates in the log domain.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AvbError, Result};

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Tolerance for algebraic identity checks.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Identifier of one model in a collection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn new(s: impl Into<String>) -> Self {
        ModelId(s.into())
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_owned())
    }
}

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into `(log_probs, probs)` with a single log-sum-exp.
pub fn normalize_log_weights(log_w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    let log_s = s.ln();
    let log_p = log_w.iter().map(|&l| (l - max) - log_s).collect();
    let p = w.iter().map(|x| x / s).collect();
    (log_p, p)
}

fn check_probability_vector(p: &[f64], tol: f64, what: &str) -> Result<()> {
    if p.iter()
        .any(|&x| !(0.0..=1.0 + tol).contains(&x) || !x.is_finite())
    {
        return Err(AvbError::Config(format!(
            "{what} has entries outside [0, 1]"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol.max(p.len() as f64 * f64::EPSILON) {
        return Err(AvbError::Config(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// One entry of a [`ModelCollection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: ModelId,
    /// Complexity score `zeta_m >= 0` supplied by the application.
    pub complexity: f64,
}

/// An indexed family of models with prior model weights `alpha`.
///
/// Weights are held in both linear and log form; the log form is exact even
/// when `alpha_m` underflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCollection {
    models: Vec<ModelEntry>,
    log_alpha: Vec<f64>,
    alpha: Vec<f64>,
    /// Exponent `L` multiplying the complexity penalty (default 1).
    pub prior_exponent: f64,
    pub b0: f64,
}

impl ModelCollection {
    fn check_ids(models: &[ModelEntry]) -> Result<()> {
        if models.is_empty() {
            return Err(AvbError::Config("model collection is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for m in models {
            if !seen.insert(&m.id) {
                return Err(AvbError::Config(format!("duplicate model id `{}`", m.id)));
            }
            if !(m.complexity >= 0.0) {
                return Err(AvbError::Config(format!(
                    "model `{}` has negative complexity",
                    m.id
                )));
            }
        }
        Ok(())
    }

    /// Builds a collection from explicit prior weights.
    pub fn from_weights(models: Vec<ModelEntry>, alpha: Vec<f64>) -> Result<Self> {
        Self::check_ids(&models)?;
        if alpha.len() != models.len() {
            return Err(AvbError::shape("alpha", models.len(), alpha.len()));
        }
        check_probability_vector(&alpha, PROB_SUM_TOL, "alpha")?;
        let log_alpha = alpha.iter().map(|a| a.ln()).collect();
        Ok(Self {
            models,
            log_alpha,
            alpha,
            prior_exponent: 1.0,
            b0: 1.0,
        })
    }

    /// Builds a collection from unnormalized log prior weights.
    pub fn from_log_weights(models: Vec<ModelEntry>, log_w: &[f64]) -> Result<Self> {
        Self::check_ids(&models)?;
        if log_w.len() != models.len() {
            return Err(AvbError::shape("log weights", models.len(), log_w.len()));
        }
        if log_w.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(AvbError::Config(
                "log prior weights must be finite or -inf".into(),
            ));
        }
        let (log_alpha, alpha) = normalize_log_weights(log_w);
        Ok(Self {
            models,
            log_alpha,
            alpha,
            prior_exponent: 1.0,
            b0: 1.0,
        })
    }

    /// `alpha_m ∝ exp(-b0 * L * scale * zeta_m^2)`.
    pub fn from_complexity(
        models: Vec<ModelEntry>,
        b0: f64,
        prior_exponent: f64,
        scale: f64,
    ) -> Result<Self> {
        if !(b0 > 0.0) || !(prior_exponent > 0.0) {
            return Err(AvbError::Config("b0 and L must be positive".into()));
        }
        let log_w: Vec<f64> = models
            .iter()
            .map(|m| -b0 * prior_exponent * scale * m.complexity * m.complexity)
            .collect();
        let mut c = Self::from_log_weights(models, &log_w)?;
        c.b0 = b0;
        c.prior_exponent = prior_exponent;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelEntry] {
        &self.models
    }

    pub fn ids(&self) -> impl Iterator<Item = &ModelId> {
        self.models.iter().map(|m| &m.id)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn log_alpha(&self) -> &[f64] {
        &self.log_alpha
    }

    pub fn position(&self, id: &ModelId) -> Option<usize> {
        self.models.iter().position(|m| &m.id == id)
    }

    /// Restricts the collection to the given positions, renormalizing alpha.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let models = keep.iter().map(|&i| self.models[i].clone()).collect();
        let log_w: Vec<f64> = keep.iter().map(|&i| self.log_alpha[i]).collect();
        let mut c = Self::from_log_weights(models, &log_w)?;
        c.b0 = self.b0;
        c.prior_exponent = self.prior_exponent;
        Ok(c)
    }
}

/// Objective value of one per-model fit, split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub expected_nll: f64,
    pub kl_to_prior: f64,
    pub total: f64,
    /// Monte Carlo draws behind `expected_nll`; 0 when exact.
    pub mc_samples_used: u64,
    /// Seed of the evaluation stream, when Monte Carlo.
    pub mc_seed: Option<u64>,
}

impl ElboBreakdown {
    pub fn exact(expected_nll: f64, kl_to_prior: f64) -> Self {
        Self {
            expected_nll,
            kl_to_prior,
            total: expected_nll + kl_to_prior,
            mc_samples_used: 0,
            mc_seed: None,
        }
    }

    pub fn monte_carlo(expected_nll: f64, kl_to_prior: f64, samples: u64, seed: u64) -> Self {
        Self {
            expected_nll,
            kl_to_prior,
            total: expected_nll + kl_to_prior,
            mc_samples_used: samples,
            mc_seed: Some(seed),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.mc_samples_used == 0
    }

    /// Two breakdowns are comparable when both are exact or both used the
    /// same number of Monte Carlo draws.
    pub fn comparable_with(&self, other: &ElboBreakdown) -> bool {
        self.mc_samples_used == other.mc_samples_used
    }

    pub fn is_finite(&self) -> bool {
        self.expected_nll.is_finite() && self.kl_to_prior.is_finite() && self.total.is_finite()
    }
}

/// The adaptive variational posterior `sum_m gamma_m Xi_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPosterior<S> {
    pub ids: Vec<ModelId>,
    pub gamma: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub components: Vec<S>,
    pub per_model_elbo: Vec<ElboBreakdown>,
    /// Set when the per-model objectives were estimated under unequal
    /// Monte Carlo settings and are not strictly comparable.
    pub mc_settings_mismatch: bool,
}

impl<S> CombinedPosterior<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.per_model_elbo.iter().map(|e| e.total).collect()
    }

    pub fn position(&self, id: &ModelId) -> Option<usize> {
        self.ids.iter().position(|m| m == id)
    }

    /// Replaces the mixture weights with a point mass on position `m`.
    pub fn point_mass(mut self, m: usize) -> Self {
        for (i, (g, lg)) in self.gamma.iter_mut().zip(&mut self.log_gamma).enumerate() {
            *g = if i == m { 1.0 } else { 0.0 };
            *lg = if i == m { 0.0 } else { f64::NEG_INFINITY };
        }
        self
    }

    pub fn map_components<T>(self, f: impl FnMut(S) -> T) -> CombinedPosterior<T> {
        CombinedPosterior {
            ids: self.ids,
            gamma: self.gamma,
            log_gamma: self.log_gamma,
            components: self.components.into_iter().map(f).collect(),
            per_model_elbo: self.per_model_elbo,
            mc_settings_mismatch: self.mc_settings_mismatch,
        }
    }
}

/// Log-domain posterior model weights `log alpha_m - E_m`, normalized.
/// Objectives are shifted by their minimum first, so large objectives with
/// small differences keep their precision.
pub fn posterior_model_weights(log_alpha: &[f64], totals: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min.is_finite() { min } else { 0.0 };
    let scores: Vec<f64> = log_alpha
        .iter()
        .zip(totals)
        .map(|(la, e)| la - (e - shift))
        .collect();
    normalize_log_weights(&scores)
}

/// Combines independently fitted per-model posteriors into the adaptive
/// variational posterior.
pub fn combine_posteriors<S>(
    collection: &ModelCollection,
    fits: impl IntoIterator<Item = (ModelId, S, ElboBreakdown)>,
) -> Result<CombinedPosterior<S>> {
    let mut by_id: HashMap<ModelId, (S, ElboBreakdown)> =
        fits.into_iter().map(|(id, s, e)| (id, (s, e))).collect();
    let mut ids = Vec::with_capacity(collection.len());
    let mut components = Vec::with_capacity(collection.len());
    let mut elbos = Vec::with_capacity(collection.len());
    for id in collection.ids() {
        let (s, e) = by_id
            .remove(id)
            .ok_or_else(|| AvbError::MissingModelFit(id.to_string()))?;
        if !e.total.is_finite() {
            return Err(AvbError::NonFiniteObjective(format!(
                "model `{id}` has objective {}",
                e.total
            )));
        }
        ids.push(id.clone());
        components.push(s);
        elbos.push(e);
    }
    let totals: Vec<f64> = elbos.iter().map(|e| e.total).collect();
    let (log_gamma, gamma) = posterior_model_weights(collection.log_alpha(), &totals);
    let mismatch = elbos.windows(2).any(|w| !w[0].comparable_with(&w[1]));
    if mismatch {
        log::warn!("combining objectives estimated under unequal Monte Carlo settings");
    }
    Ok(CombinedPosterior {
        ids,
        gamma,
        log_gamma,
        components,
        per_model_elbo: elbos,
        mc_settings_mismatch: mismatch,
    })
}

/// `KL(Unif box || Unif[-B, B]^p) = sum_j log(2B / (hi_j - lo_j))`.
pub fn kl_uniform_box(lo: &[f64], hi: &[f64], bound: f64) -> Result<f64> {
    if lo.len() != hi.len() {
        return Err(AvbError::shape("box endpoints", lo.len(), hi.len()));
    }
    let mut kl = 0.0;
    for (j, (&a, &b)) in lo.iter().zip(hi).enumerate() {
        if a < -bound || a > bound {
            return Err(AvbError::OutOfSupport {
                coord: j,
                value: a,
                bound,
            });
        }
        if b < -bound || b > bound {
            return Err(AvbError::OutOfSupport {
                coord: j,
                value: b,
                bound,
            });
        }
        if !(b - a > 0.0) {
            return Err(AvbError::DegenerateBox {
                coord: j,
                lo: a,
                hi: b,
            });
        }
        kl += (2.0 * bound / (b - a)).ln();
    }
    Ok(kl)
}

/// `KL(Cat(gamma) || Cat(alpha))` with `0 log 0 = 0`.
pub fn kl_categorical(gamma: &[f64], alpha: &[f64]) -> Result<f64> {
    if gamma.len() != alpha.len() {
        return Err(AvbError::shape(
            "categorical vectors",
            alpha.len(),
            gamma.len(),
        ));
    }
    let log_alpha: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    kl_categorical_log(gamma, &log_alpha)
}

/// As [`kl_categorical`] with the reference distribution given in log form.
pub fn kl_categorical_log(gamma: &[f64], log_alpha: &[f64]) -> Result<f64> {
    if gamma.len() != log_alpha.len() {
        return Err(AvbError::shape(
            "categorical vectors",
            log_alpha.len(),
            gamma.len(),
        ));
    }
    let mut kl = 0.0;
    for (i, (&g, &la)) in gamma.iter().zip(log_alpha).enumerate() {
        if g == 0.0 {
            continue;
        }
        if la == f64::NEG_INFINITY {
            return Err(AvbError::AbsoluteContinuity(i));
        }
        kl += g * (g.ln() - la);
    }
    Ok(kl.max(0.0))
}

/// Objective of the mixture `sum_m gamma_m Xi_m` over disjoint supports:
/// `KL(gamma, alpha) + sum_m gamma_m E_m`.
pub fn elbo_of_combination(
    collection: &ModelCollection,
    gamma: &[f64],
    per_model_totals: &[f64],
) -> Result<f64> {
    if gamma.len() != collection.len() {
        return Err(AvbError::shape("gamma", collection.len(), gamma.len()));
    }
    if per_model_totals.len() != collection.len() {
        return Err(AvbError::shape(
            "per-model objectives",
            collection.len(),
            per_model_totals.len(),
        ));
    }
    let kl = kl_categorical_log(gamma, collection.log_alpha())?;
    let avg: f64 = gamma
        .iter()
        .zip(per_model_totals)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, e)| g * e)
        .sum();
    Ok(kl + avg)
}

/// Result of comparing variational and exact posterior model probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBound {
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `(sum_m |gamma_m - alpha_hat_m|)^2` against `2 KL(Xi, Pi(.|Y))`.
pub fn model_probability_gap_bound(
    gamma: &[f64],
    alpha_hat: &[f64],
    kl_to_posterior: f64,
) -> Result<GapBound> {
    if gamma.len() != alpha_hat.len() {
        return Err(AvbError::shape(
            "model probabilities",
            alpha_hat.len(),
            gamma.len(),
        ));
    }
    let l1: f64 = gamma
        .iter()
        .zip(alpha_hat)
        .map(|(g, a)| (g - a).abs())
        .sum();
    let gap = l1 * l1;
    let bound = 2.0 * kl_to_posterior;
    Ok(GapBound {
        gap,
        bound,
        holds: gap <= bound + PROB_SUM_TOL,
    })
}

/// Both sides of the change-of-measure inequality
/// `E_xi1[g] <= KL(xi1, xi2) + log E_xi2[exp g]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn change_of_measure_check(xi1: &[f64], xi2: &[f64], g: &[f64]) -> Result<InequalityCheck> {
    if xi1.len() != xi2.len() {
        return Err(AvbError::shape("measures", xi2.len(), xi1.len()));
    }
    if g.len() != xi1.len() {
        return Err(AvbError::shape("test function", xi1.len(), g.len()));
    }
    let lhs: f64 = xi1
        .iter()
        .zip(g)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p * v)
        .sum();
    let kl = kl_categorical(xi1, xi2)?;
    let terms: Vec<f64> = xi2
        .iter()
        .zip(g)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, v)| p.ln() + v)
        .collect();
    let rhs = kl + log_sum_exp(&terms);
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + IDENTITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(n: usize) -> Vec<ModelEntry> {
        (0..n)
            .map(|i| ModelEntry {
                id: ModelId(format!("m{i}")),
                complexity: i as f64,
            })
            .collect()
    }

    fn fits(totals: &[f64]) -> Vec<(ModelId, (), ElboBreakdown)> {
        totals
            .iter()
            .enumerate()
            .map(|(i, &e)| (ModelId(format!("m{i}")), (), ElboBreakdown::exact(e, 0.0)))
            .collect()
    }

    #[test]
    fn combine_equal_weights() {
        let c = ModelCollection::from_weights(entries(2), vec![0.5, 0.5]).unwrap();
        let post = combine_posteriors(&c, fits(&[3.0, 3.0])).unwrap();
        assert_eq!(post.gamma, vec![0.5, 0.5]);
    }

    #[test]
    fn combine_two_models_matches_direct_value() {
        let c = ModelCollection::from_weights(entries(2), vec![0.7, 0.3]).unwrap();
        let post = combine_posteriors(&c, fits(&[1.0, 2.0])).unwrap();
        // 0.7/e / (0.7/e + 0.3/e^2)
        assert!((post.gamma[0] - 0.863_809_528_577_811_8).abs() < 1e-12);
        assert!((post.gamma[1] - 0.136_190_471_422_188_2).abs() < 1e-12);
    }

    #[test]
    fn combine_survives_huge_spread() {
        let c = ModelCollection::from_weights(entries(2), vec![0.5, 0.5]).unwrap();
        let post = combine_posteriors(&c, fits(&[0.0, 1e6])).unwrap();
        assert_eq!(post.gamma[0], 1.0);
        assert_eq!(post.log_gamma[1], -1e6);
        assert!(post.gamma.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn combine_reports_missing_and_nonfinite() {
        let c = ModelCollection::from_weights(entries(2), vec![0.5, 0.5]).unwrap();
        let mut f = fits(&[0.0, 1.0]);
        f.pop();
        assert!(matches!(
            combine_posteriors(&c, f),
            Err(AvbError::MissingModelFit(_))
        ));
        assert!(matches!(
            combine_posteriors(&c, fits(&[0.0, f64::NAN])),
            Err(AvbError::NonFiniteObjective(_))
        ));
    }

    #[test]
    fn mc_mismatch_is_flagged() {
        let c = ModelCollection::from_weights(entries(2), vec![0.5, 0.5]).unwrap();
        let f = vec![
            (
                ModelId::from("m0"),
                (),
                ElboBreakdown::monte_carlo(1.0, 0.0, 8, 1),
            ),
            (ModelId::from("m1"), (), ElboBreakdown::exact(1.0, 0.0)),
        ];
        assert!(combine_posteriors(&c, f).unwrap().mc_settings_mismatch);
    }

    #[test]
    fn collection_validation() {
        assert!(ModelCollection::from_weights(entries(2), vec![0.6, 0.6]).is_err());
        let mut dup = entries(2);
        dup[1].id = dup[0].id.clone();
        assert!(ModelCollection::from_weights(dup, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn complexity_weights_follow_formula() {
        let c = ModelCollection::from_complexity(entries(3), 0.5, 2.0, 3.0).unwrap();
        let la = c.log_alpha();
        // zeta = 0, 1, 2 -> unnormalized -0, -3, -12
        assert!(((la[0] - la[1]) - 3.0).abs() < 1e-12);
        assert!(((la[0] - la[2]) - 12.0).abs() < 1e-12);
        assert!((c.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_box_kl_examples() {
        let b = 1.5;
        assert_eq!(kl_uniform_box(&[-b; 3], &[b; 3], b).unwrap(), 0.0);
        let v = kl_uniform_box(&[0.0], &[1.0], 1.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = kl_uniform_box(&[-1.0, 0.0], &[1.0, 2.0], 2.0).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_box_kl_errors() {
        assert!(matches!(
            kl_uniform_box(&[0.5], &[0.5], 1.0),
            Err(AvbError::DegenerateBox { .. })
        ));
        assert!(matches!(
            kl_uniform_box(&[-2.0], &[0.5], 1.0),
            Err(AvbError::OutOfSupport { .. })
        ));
    }

    #[test]
    fn categorical_kl_examples() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_categorical(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let oracle = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.5108).abs() < 1e-4);
        let v = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            kl_categorical(&[0.5, 0.5], &[1.0, 0.0]),
            Err(AvbError::AbsoluteContinuity(1))
        ));
    }

    #[test]
    fn combination_objective_examples() {
        let c = ModelCollection::from_weights(entries(2), vec![0.3, 0.7]).unwrap();
        let v = elbo_of_combination(&c, &[0.0, 1.0], &[4.0, 2.0]).unwrap();
        assert!((v - (2.0 - 0.7f64.ln())).abs() < 1e-14);

        let post = combine_posteriors(&c, fits(&[4.0, 2.0])).unwrap();
        let at_opt = elbo_of_combination(&c, &post.gamma, &[4.0, 2.0]).unwrap();
        let best_single = (4.0 - 0.3f64.ln()).min(2.0 - 0.7f64.ln());
        assert!(at_opt <= best_single);
        // the minimum equals -log sum alpha exp(-E)
        let lse = log_sum_exp(&[0.3f64.ln() - 4.0, 0.7f64.ln() - 2.0]);
        assert!((at_opt + lse).abs() < 1e-12);

        let c = ModelCollection::from_weights(entries(2), vec![0.5, 0.5]).unwrap();
        let v = elbo_of_combination(&c, &[0.25, 0.75], &[0.0, 0.0]).unwrap();
        let oracle = 0.25 * (0.5f64).ln() + 0.75 * (1.5f64).ln();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.1308).abs() < 1e-4);
    }

    #[test]
    fn gap_bound_examples() {
        let r = model_probability_gap_bound(&[0.2, 0.8], &[0.2, 0.8], 0.0).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(r.holds);
        let r = model_probability_gap_bound(&[1.0, 0.0], &[0.5, 0.5], 2f64.ln()).unwrap();
        assert!((r.gap - 1.0).abs() < 1e-15);
        assert!((r.bound - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!(r.holds);
        let r = model_probability_gap_bound(&[1.0, 0.0], &[0.5, 0.5], 0.1).unwrap();
        assert!(!r.holds);
        assert!(matches!(
            model_probability_gap_bound(&[1.0], &[0.5, 0.5], 0.1),
            Err(AvbError::Shape { .. })
        ));
    }

    #[test]
    fn change_of_measure_examples() {
        let r = change_of_measure_check(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], &[1.5; 3]).unwrap();
        assert!((r.lhs - 1.5).abs() < 1e-14 && (r.rhs - 1.5).abs() < 1e-14);
        let r = change_of_measure_check(&[1.0, 0.0], &[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_eq!(r.lhs, 1.0);
        let oracle = 2f64.ln() + ((1f64.exp() + 1.0) / 2.0).ln();
        assert!((r.rhs - oracle).abs() < 1e-14);
        assert!((r.rhs - 1.3133).abs() < 1e-4);
        assert!(r.holds);
        assert!(matches!(
            change_of_measure_check(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 0.0]),
            Err(AvbError::AbsoluteContinuity(1))
        ));
    }
}
