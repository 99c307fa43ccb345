//! Adaptive variational Bayes.
//!
//! Fit a variational posterior per model by minimizing the variational
//! objective, then combine the per-model fits in closed form into a posterior
//! over the whole model collection. Model-selection variational Bayes (keep
//! only the best single model) is provided as the comparison baseline.
//!
//! Backends: Gaussian mixtures ([`mixture`]), bounded ReLU networks with
//! uniform-box families ([`deep`]), Dirac-mixture particle families on
//! discretized spaces ([`particle`]) and quasi-likelihood fits ([`quasi`]).

pub mod compare;
pub mod deep;
pub mod error;
pub mod experiment;
pub mod mixture;
pub mod particle;
pub mod quasi;
pub mod rng;
pub mod vb;

pub use error::{AvbError, Result};
pub use vb::{
    combine_posteriors, CombinedPosterior, ElboBreakdown, ModelCollection, ModelEntry, ModelId,
};
