//! Mean-field variational Bayes for Gaussian location-scale mixtures.
//!
//! Model with `m` components in `d` dimensions:
//!
//! ```text
//! varpi ~ Dir(a0), theta_k ~ N(mu0, Sigma0), Lambda_k ~ Wishart(nu0, W0),
//! z_i | varpi ~ Cat(varpi), x_i | z_i = k ~ N(theta_k, Lambda_k^{-1})
//! ```
//!
//! The variational family factorizes as
//! `q(varpi) prod_k q(theta_k) q(Lambda_k) prod_i q(z_i)`; all coordinate
//! updates and the objective are closed form. Allocations `z` count as
//! parameters, so their categorical KL is part of `kl_to_prior`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{AvbError, Result};
use crate::rng::{derive_seed, substream};
use crate::vb::{
    combine_posteriors, log_sum_exp, CombinedPosterior, ElboBreakdown, ModelCollection, ModelEntry,
    ModelId,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Priors for an `m`-component mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModelSpec {
    pub m: usize,
    pub d: usize,
    pub mean_prior_mean: DVector<f64>,
    pub mean_prior_cov: DMatrix<f64>,
    pub wishart_dof: f64,
    pub wishart_scale: DMatrix<f64>,
    /// Symmetric Dirichlet concentration on the mixing weights.
    pub dirichlet: f64,
}

impl MixtureModelSpec {
    /// `N(0, 100 I)` means, `Wishart(10, 0.1 I)` precisions, `Dir(1)` weights.
    pub fn new(m: usize, d: usize) -> Result<Self> {
        let spec = Self {
            m,
            d,
            mean_prior_mean: DVector::zeros(d),
            mean_prior_cov: DMatrix::identity(d, d) * 100.0,
            wishart_dof: 10.0,
            wishart_scale: DMatrix::identity(d, d) * 0.1,
            dirichlet: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 {
            return Err(AvbError::Config("mixture needs m >= 1 and d >= 1".into()));
        }
        if self.mean_prior_mean.len() != self.d {
            return Err(AvbError::shape(
                "prior mean",
                self.d,
                self.mean_prior_mean.len(),
            ));
        }
        if !(self.wishart_dof > self.d as f64 - 1.0) {
            return Err(AvbError::Config(format!(
                "Wishart degrees of freedom {} must exceed d - 1",
                self.wishart_dof
            )));
        }
        if !(self.dirichlet > 0.0) {
            return Err(AvbError::Config(
                "Dirichlet concentration must be positive".into(),
            ));
        }
        for (what, a) in [
            ("prior mean covariance", &self.mean_prior_cov),
            ("Wishart scale", &self.wishart_scale),
        ] {
            if a.nrows() != self.d || a.ncols() != self.d {
                return Err(AvbError::shape(what, self.d, a.nrows()));
            }
            if a.clone().cholesky().is_none() {
                return Err(AvbError::Config(format!("{what} is not positive definite")));
            }
        }
        Ok(())
    }
}

/// `q(theta_k) = N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `q(Lambda_k) = Wishart(dof, scale)`, with `E[Lambda_k] = dof * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartFactor {
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

impl WishartFactor {
    pub fn mean(&self) -> DMatrix<f64> {
        &self.scale * self.dof
    }

    /// `E[log |Lambda|] = psi_d(dof / 2) + d log 2 + log |scale|`.
    pub fn expected_log_det(&self) -> f64 {
        let d = self.scale.nrows();
        multi_digamma(0.5 * self.dof, d) + d as f64 * std::f64::consts::LN_2 + log_det(&self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureVariationalState {
    /// `n x m`, row-stochastic.
    pub responsibilities: DMatrix<f64>,
    /// Dirichlet concentration of `q(varpi)`.
    pub weight_factor: DVector<f64>,
    pub mean_factors: Vec<GaussianFactor>,
    pub precision_factors: Vec<WishartFactor>,
}

impl MixtureVariationalState {
    pub fn m(&self) -> usize {
        self.weight_factor.len()
    }

    /// A complete state whose factors are moment-matched to the given
    /// responsibilities; used to start coordinate ascent.
    pub fn from_responsibilities(
        spec: &MixtureModelSpec,
        data: &DMatrix<f64>,
        responsibilities: DMatrix<f64>,
    ) -> Result<Self> {
        check_data(spec, data)?;
        if responsibilities.nrows() != data.nrows() || responsibilities.ncols() != spec.m {
            return Err(AvbError::shape(
                "responsibilities",
                spec.m,
                responsibilities.ncols(),
            ));
        }
        let counts = column_sums(&responsibilities);
        let mut mean_factors = Vec::with_capacity(spec.m);
        let mut precision_factors = Vec::with_capacity(spec.m);
        for k in 0..spec.m {
            let mean = if counts[k] > 1e-10 {
                weighted_sum(data, &responsibilities, k) / counts[k]
            } else {
                spec.mean_prior_mean.clone()
            };
            mean_factors.push(GaussianFactor {
                mean,
                cov: DMatrix::identity(spec.d, spec.d) / (counts[k] + 1.0),
            });
            precision_factors.push(WishartFactor {
                dof: spec.wishart_dof + counts[k],
                scale: spec.wishart_scale.clone(),
            });
        }
        let weight_factor = counts.map(|c| c + spec.dirichlet);
        Ok(Self {
            responsibilities,
            weight_factor,
            mean_factors,
            precision_factors,
        })
    }

    /// Relabels components: new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.responsibilities.nrows();
        let r = DMatrix::from_fn(n, perm.len(), |i, j| self.responsibilities[(i, perm[j])]);
        Self {
            responsibilities: r,
            weight_factor: DVector::from_iterator(
                perm.len(),
                perm.iter().map(|&k| self.weight_factor[k]),
            ),
            mean_factors: perm.iter().map(|&k| self.mean_factors[k].clone()).collect(),
            precision_factors: perm
                .iter()
                .map(|&k| self.precision_factors[k].clone())
                .collect(),
        }
    }

    /// Posterior-mean mixing weights `E[varpi]`.
    pub fn expected_weights(&self) -> Vec<f64> {
        let s = self.weight_factor.sum();
        self.weight_factor.iter().map(|a| a / s).collect()
    }
}

fn check_data(spec: &MixtureModelSpec, data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 {
        return Err(AvbError::Config("mixture data is empty".into()));
    }
    if data.ncols() != spec.d {
        return Err(AvbError::shape("data columns", spec.d, data.ncols()));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(AvbError::Config(
            "mixture data contains non-finite values".into(),
        ));
    }
    Ok(())
}

fn column_sums(r: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(r.ncols(), r.column_iter().map(|c| c.sum()))
}

fn weighted_sum(data: &DMatrix<f64>, r: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let mut s = DVector::zeros(data.ncols());
    for i in 0..data.nrows() {
        s += data.row(i).transpose() * r[(i, k)];
    }
    s
}

fn multi_digamma(a: f64, d: usize) -> f64 {
    (0..d).map(|i| digamma(a - 0.5 * i as f64)).sum()
}

fn multi_ln_gamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    0.25 * df * (df - 1.0) * std::f64::consts::PI.ln()
        + (0..d).map(|i| ln_gamma(a - 0.5 * i as f64)).sum::<f64>()
}

fn log_det(a: &DMatrix<f64>) -> f64 {
    match a.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        None => f64::NAN,
    }
}

fn spd_inverse(a: &DMatrix<f64>, iteration: usize, what: &str) -> Result<DMatrix<f64>> {
    let inv = a
        .clone()
        .cholesky()
        .ok_or_else(|| AvbError::NumericalBreakdown {
            iteration,
            reason: format!("{what} is not positive definite"),
        })?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `KL(Dir(a) || Dir(a0))`.
pub fn kl_dirichlet(a: &[f64], a0: &[f64]) -> f64 {
    let sa: f64 = a.iter().sum();
    let sa0: f64 = a0.iter().sum();
    let dsa = digamma(sa);
    ln_gamma(sa) - ln_gamma(sa0)
        + a.iter()
            .zip(a0)
            .map(|(&x, &x0)| ln_gamma(x0) - ln_gamma(x) + (x - x0) * (digamma(x) - dsa))
            .sum::<f64>()
}

/// `KL(N(m, S) || N(m0, S0))`.
pub fn kl_gaussian(q: &GaussianFactor, m0: &DVector<f64>, s0: &DMatrix<f64>) -> Result<f64> {
    let d = m0.len() as f64;
    let s0_inv = spd_inverse(s0, 0, "prior covariance")?;
    let diff = &q.mean - m0;
    let quad = (diff.transpose() * &s0_inv * &diff)[(0, 0)];
    Ok(0.5 * ((&s0_inv * &q.cov).trace() + quad - d + log_det(s0) - log_det(&q.cov)))
}

/// `KL(Wishart(nu, W) || Wishart(nu0, W0))`.
pub fn kl_wishart(q: &WishartFactor, nu0: f64, w0: &DMatrix<f64>) -> Result<f64> {
    let d = w0.nrows();
    let (nu, w) = (q.dof, &q.scale);
    let w0_inv = spd_inverse(w0, 0, "Wishart prior scale")?;
    Ok(
        0.5 * (nu - nu0) * multi_digamma(0.5 * nu, d) - 0.5 * nu * d as f64
            + 0.5 * nu * (&w0_inv * w).trace()
            + 0.5 * nu0 * (log_det(w0) - log_det(w))
            + multi_ln_gamma(0.5 * nu0, d)
            - multi_ln_gamma(0.5 * nu, d),
    )
}

/// Expected log-density `E_q[log N(x | theta_k, Lambda_k^{-1})]` for every
/// point and component.
fn expected_log_lik(state: &MixtureVariationalState, data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = (data.nrows(), data.ncols());
    let m = state.m();
    let mut out = DMatrix::zeros(n, m);
    for k in 0..m {
        let pf = &state.precision_factors[k];
        let mf = &state.mean_factors[k];
        let e_lambda = pf.mean();
        let base = 0.5 * pf.expected_log_det()
            - 0.5 * d as f64 * LN_2PI
            - 0.5 * (&e_lambda * &mf.cov).trace();
        for i in 0..n {
            let diff = data.row(i).transpose() - &mf.mean;
            let quad = (diff.transpose() * &e_lambda * &diff)[(0, 0)];
            out[(i, k)] = base - 0.5 * quad;
        }
    }
    out
}

fn expected_log_weights(state: &MixtureVariationalState) -> Vec<f64> {
    let ds = digamma(state.weight_factor.sum());
    state
        .weight_factor
        .iter()
        .map(|&a| digamma(a) - ds)
        .collect()
}

/// The objective `E_q[-log p(x | z, theta, Lambda)] + KL(q || prior)`.
pub fn mixture_objective(
    spec: &MixtureModelSpec,
    data: &DMatrix<f64>,
    state: &MixtureVariationalState,
) -> Result<ElboBreakdown> {
    check_data(spec, data)?;
    let r = &state.responsibilities;
    if r.nrows() != data.nrows() || r.ncols() != spec.m {
        return Err(AvbError::shape("responsibilities", spec.m, r.ncols()));
    }
    let ell = expected_log_lik(state, data);
    let nll = -r.component_mul(&ell).sum();
    let elw = expected_log_weights(state);
    let mut kl_z = 0.0;
    for i in 0..r.nrows() {
        for k in 0..spec.m {
            let p = r[(i, k)];
            if p > 0.0 {
                kl_z += p * (p.ln() - elw[k]);
            }
        }
    }
    let a0 = vec![spec.dirichlet; spec.m];
    let mut kl = kl_z + kl_dirichlet(state.weight_factor.as_slice(), &a0);
    for k in 0..spec.m {
        kl += kl_gaussian(
            &state.mean_factors[k],
            &spec.mean_prior_mean,
            &spec.mean_prior_cov,
        )?;
        kl += kl_wishart(
            &state.precision_factors[k],
            spec.wishart_dof,
            &spec.wishart_scale,
        )?;
    }
    let e = ElboBreakdown::exact(nll, kl);
    if !e.is_finite() {
        return Err(AvbError::NonFiniteObjective(format!(
            "mixture objective (nll {nll}, kl {kl})"
        )));
    }
    Ok(e)
}

/// One full coordinate sweep: weights, precisions, means, responsibilities.
fn sweep(
    spec: &MixtureModelSpec,
    data: &DMatrix<f64>,
    state: &mut MixtureVariationalState,
    iteration: usize,
) -> Result<()> {
    let (n, m) = (data.nrows(), spec.m);
    let counts = column_sums(&state.responsibilities);
    state.weight_factor = counts.map(|c| c + spec.dirichlet);

    let w0_inv = spd_inverse(&spec.wishart_scale, iteration, "Wishart prior scale")?;
    for k in 0..m {
        let mf = &state.mean_factors[k];
        let mut acc = w0_inv.clone();
        for i in 0..n {
            let r = state.responsibilities[(i, k)];
            if r > 0.0 {
                let diff = data.row(i).transpose() - &mf.mean;
                acc += (&diff * diff.transpose() + &mf.cov) * r;
            }
        }
        state.precision_factors[k] = WishartFactor {
            dof: spec.wishart_dof + counts[k],
            scale: spd_inverse(&acc, iteration, "precision factor scale")?,
        };
    }

    let s0_inv = spd_inverse(&spec.mean_prior_cov, iteration, "prior mean covariance")?;
    let prior_term = &s0_inv * &spec.mean_prior_mean;
    for k in 0..m {
        let e_lambda = state.precision_factors[k].mean();
        let prec = &s0_inv + &e_lambda * counts[k];
        let cov = spd_inverse(&prec, iteration, "mean factor precision")?;
        let mean =
            &cov * (&prior_term + &e_lambda * weighted_sum(data, &state.responsibilities, k));
        state.mean_factors[k] = GaussianFactor { mean, cov };
    }

    let ell = expected_log_lik(state, data);
    let elw = expected_log_weights(state);
    let mut row = vec![0.0; m];
    for i in 0..n {
        for k in 0..m {
            row[k] = elw[k] + ell[(i, k)];
        }
        let lse = log_sum_exp(&row);
        for k in 0..m {
            state.responsibilities[(i, k)] = (row[k] - lse).exp();
        }
    }
    if state.responsibilities.iter().any(|x| !x.is_finite()) {
        return Err(AvbError::NumericalBreakdown {
            iteration,
            reason: "non-finite responsibilities".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub state: MixtureVariationalState,
    pub elbo: ElboBreakdown,
    /// Objective at the initial state and after every sweep.
    pub trace: Vec<f64>,
}

/// Coordinate ascent from `init` until the relative change in the objective
/// drops below `tol` or `max_iters` sweeps have run.
pub fn cavi_fit(
    spec: &MixtureModelSpec,
    data: &DMatrix<f64>,
    init: MixtureVariationalState,
    max_iters: usize,
    tol: f64,
) -> Result<MixtureFit> {
    spec.validate()?;
    let mut state = init;
    let mut elbo = mixture_objective(spec, data, &state)?;
    let mut trace = vec![elbo.total];
    for it in 1..=max_iters {
        sweep(spec, data, &mut state, it)?;
        let next = mixture_objective(spec, data, &state).map_err(|e| match e {
            AvbError::NonFiniteObjective(reason) => AvbError::NumericalBreakdown {
                iteration: it,
                reason,
            },
            other => other,
        })?;
        let delta = elbo.total - next.total;
        elbo = next;
        trace.push(elbo.total);
        if delta.abs() < tol * elbo.total.abs().max(1.0) {
            break;
        }
    }
    Ok(MixtureFit { state, elbo, trace })
}

/// k-means++ seeding: centers drawn with probability proportional to squared
/// distance from the nearest chosen center, then hard nearest-center
/// responsibilities.
pub fn kmeans_pp_responsibilities(
    data: &DMatrix<f64>,
    m: usize,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    let n = data.nrows();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(m);
    centers.push(data.row(rng.random_range(0..n)).transpose());
    let mut dist: Vec<f64> = (0..n)
        .map(|i| (data.row(i).transpose() - &centers[0]).norm_squared())
        .collect();
    while centers.len() < m {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        let c = data.row(next).transpose();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((data.row(i).transpose() - &c).norm_squared());
        }
        centers.push(c);
    }
    let mut r = DMatrix::zeros(n, m);
    for i in 0..n {
        let x = data.row(i).transpose();
        let best = (0..m)
            .min_by(|&a, &b| {
                (&x - &centers[a])
                    .norm_squared()
                    .total_cmp(&(&x - &centers[b]).norm_squared())
            })
            .unwrap_or(0);
        r[(i, best)] = 1.0;
    }
    r
}

/// Settings for [`fit_mixture`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaviConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for CaviConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Best of `restarts` k-means++-seeded coordinate-ascent runs.
pub fn fit_mixture(
    spec: &MixtureModelSpec,
    data: &DMatrix<f64>,
    config: &CaviConfig,
) -> Result<MixtureFit> {
    check_data(spec, data)?;
    let mut best: Option<MixtureFit> = None;
    let mut last_err = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = substream(config.seed, &[r as u64]);
        let resp = kmeans_pp_responsibilities(data, spec.m, &mut rng);
        let init = MixtureVariationalState::from_responsibilities(spec, data, resp)?;
        match cavi_fit(spec, data, init, config.max_iters, config.tol) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.elbo.total < b.elbo.total) {
                    best = Some(fit);
                }
            }
            Err(e) => {
                log::warn!("mixture restart {r} with m = {} failed: {e}", spec.m);
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

pub fn mixture_model_id(m: usize) -> ModelId {
    ModelId::new(format!("m{m}"))
}

/// Prior over component counts `Pi(m) ∝ exp(-m log m)`.
pub fn component_count_collection(ms: &[usize]) -> Result<ModelCollection> {
    let models = ms
        .iter()
        .map(|&m| ModelEntry {
            id: mixture_model_id(m),
            complexity: m as f64,
        })
        .collect();
    let log_w: Vec<f64> = ms.iter().map(|&m| -(m as f64) * (m as f64).ln()).collect();
    ModelCollection::from_log_weights(models, &log_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureGridFit {
    pub collection: ModelCollection,
    pub combined: CombinedPosterior<MixtureVariationalState>,
    pub traces: Vec<Vec<f64>>,
    /// Component counts whose fits failed and were dropped from the collection.
    pub failures: Vec<(usize, String)>,
}

/// Fits every component count in `ms` (in parallel) and combines them.
/// Failed fits are dropped and the prior renormalized over the rest.
pub fn fit_mixture_grid(
    data: &DMatrix<f64>,
    ms: &[usize],
    config: &CaviConfig,
) -> Result<MixtureGridFit> {
    let d = data.ncols();
    let collection = component_count_collection(ms)?;
    let results: Vec<Result<MixtureFit>> = ms
        .par_iter()
        .map(|&m| {
            let spec = MixtureModelSpec::new(m, d)?;
            let cfg = CaviConfig {
                seed: derive_seed(config.seed, &[m as u64]),
                ..*config
            };
            fit_mixture(&spec, data, &cfg)
        })
        .collect();
    let mut keep = Vec::new();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(f) => {
                keep.push(i);
                fits.push((mixture_model_id(ms[i]), f));
            }
            Err(e) => {
                log::warn!("dropping m = {} from the combination: {e}", ms[i]);
                failures.push((ms[i], e.to_string()));
            }
        }
    }
    if keep.is_empty() {
        return Err(AvbError::Config("every mixture fit failed".into()));
    }
    let collection = collection.restrict(&keep)?;
    let traces = fits.iter().map(|(_, f)| f.trace.clone()).collect();
    let combined = combine_posteriors(
        &collection,
        fits.into_iter().map(|(id, f)| (id, f.state, f.elbo)),
    )?;
    Ok(MixtureGridFit {
        collection,
        combined,
        traces,
        failures,
    })
}

/// True mixing weights of the reference four-component mixture.
pub const TRUTH_WEIGHTS: [f64; 4] = [0.3, 0.3, 0.2, 0.2];
/// True means of the reference mixture; covariances are the identity.
pub const TRUTH_MEANS: [[f64; 2]; 4] = [[0.0, 0.0], [-4.0, -4.0], [4.0, 4.0], [0.0, 4.0]];

/// Draws `n` points from the reference mixture together with their labels.
pub fn sample_truth_labeled(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = substream(seed, &[]);
    let idx = WeightedIndex::new(TRUTH_WEIGHTS).expect("static weights are valid");
    let mut data = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = idx.sample(&mut rng);
        for j in 0..2 {
            let e: f64 = rng.sample(StandardNormal);
            data[(i, j)] = TRUTH_MEANS[k][j] + e;
        }
        labels.push(k);
    }
    (data, labels)
}

pub fn sample_truth(n: usize, seed: u64) -> DMatrix<f64> {
    sample_truth_labeled(n, seed).0
}

fn gaussian_log_pdf(x: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = mean.len();
    let Some(chol) = cov.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let diff = DVector::from_column_slice(x) - mean;
    let z = chol.l().solve_lower_triangular(&diff).unwrap_or(diff);
    let half_log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * z.norm_squared() - half_log_det - 0.5 * d as f64 * LN_2PI
}

/// Plug-in density of one fitted model: weights `E[varpi]`, means `E[theta_k]`
/// and covariances `E[Lambda_k]^{-1}`.
pub fn component_density(state: &MixtureVariationalState, x: &[f64]) -> f64 {
    let w = state.expected_weights();
    let terms: Vec<f64> = (0..state.m())
        .map(|k| {
            let cov = state.precision_factors[k]
                .mean()
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::from_element(1, 1, f64::NAN));
            w[k].ln() + gaussian_log_pdf(x, &state.mean_factors[k].mean, &cov)
        })
        .collect();
    log_sum_exp(&terms).exp()
}

/// `sum_m gamma_m * component_density_m(x)` at every grid point.
pub fn predictive_density(
    combined: &CombinedPosterior<MixtureVariationalState>,
    grid: &[Vec<f64>],
) -> Vec<f64> {
    grid.iter()
        .map(|x| {
            combined
                .gamma
                .iter()
                .zip(&combined.components)
                .filter(|(g, _)| **g > 0.0)
                .map(|(g, s)| g * component_density(s, x))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = substream(seed, &[]);
        let mut data = DMatrix::zeros(n, 2);
        let mut labels = Vec::new();
        for i in 0..n {
            let k = i % 2;
            let c = if k == 0 { 10.0 } else { -10.0 };
            for j in 0..2 {
                let e: f64 = rng.sample(StandardNormal);
                data[(i, j)] = c + e;
            }
            labels.push(k);
        }
        (data, labels)
    }

    #[test]
    fn kl_terms_vanish_at_the_prior() {
        let spec = MixtureModelSpec::new(3, 2).unwrap();
        assert!(kl_dirichlet(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).abs() < 1e-12);
        let g = GaussianFactor {
            mean: spec.mean_prior_mean.clone(),
            cov: spec.mean_prior_cov.clone(),
        };
        assert!(
            kl_gaussian(&g, &spec.mean_prior_mean, &spec.mean_prior_cov)
                .unwrap()
                .abs()
                < 1e-12
        );
        let w = WishartFactor {
            dof: spec.wishart_dof,
            scale: spec.wishart_scale.clone(),
        };
        assert!(
            kl_wishart(&w, spec.wishart_dof, &spec.wishart_scale)
                .unwrap()
                .abs()
                < 1e-12
        );
        let w2 = WishartFactor {
            dof: 14.0,
            scale: DMatrix::identity(2, 2) * 0.3,
        };
        assert!(kl_wishart(&w2, spec.wishart_dof, &spec.wishart_scale).unwrap() > 0.0);
    }

    #[test]
    fn one_dimensional_wishart_kl_matches_gamma_kl() {
        // Wishart(nu, w) in one dimension is Gamma(shape nu/2, rate 1/(2w)).
        let q = WishartFactor {
            dof: 7.0,
            scale: DMatrix::from_element(1, 1, 0.4),
        };
        let p0 = (3.0, DMatrix::from_element(1, 1, 1.5));
        let (a, b): (f64, f64) = (3.5, 1.0 / 0.8);
        let (a0, b0): (f64, f64) = (1.5, 1.0 / 3.0);
        let gamma_kl = (a - a0) * digamma(a) - ln_gamma(a)
            + ln_gamma(a0)
            + a0 * (b / b0).ln()
            + a * (b0 - b) / b;
        let got = kl_wishart(&q, p0.0, &p0.1).unwrap();
        assert!((got - gamma_kl).abs() < 1e-12, "{got} vs {gamma_kl}");
    }

    #[test]
    fn single_component_is_the_conjugate_update() {
        let (data, _) = two_clusters(40, 3);
        let spec = MixtureModelSpec::new(1, 2).unwrap();
        let fit = fit_mixture(&spec, &data, &CaviConfig::default()).unwrap();
        assert!(fit.state.responsibilities.iter().all(|&r| r == 1.0));
        let e_lambda = fit.state.precision_factors[0].mean();
        let s0_inv = spec.mean_prior_cov.clone().try_inverse().unwrap();
        let prec = &s0_inv + &e_lambda * 40.0;
        let cov = prec.try_inverse().unwrap();
        let sum = DVector::from_iterator(2, data.column_iter().map(|c| c.sum()));
        let mean = &cov * (&s0_inv * &spec.mean_prior_mean + &e_lambda * sum);
        assert!((&fit.state.mean_factors[0].mean - mean).norm() < 1e-10);
        assert!((&fit.state.mean_factors[0].cov - cov).norm() < 1e-10);
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let (data, labels) = two_clusters(100, 4);
        let spec = MixtureModelSpec::new(2, 2).unwrap();
        let fit = fit_mixture(&spec, &data, &CaviConfig::default()).unwrap();
        let r = &fit.state.responsibilities;
        let avg_max: f64 = (0..100).map(|i| r[(i, 0)].max(r[(i, 1)])).sum::<f64>() / 100.0;
        assert!(avg_max >= 0.99);
        let first = if r[(0, 0)] > 0.5 { 0 } else { 1 };
        for (i, &l) in labels.iter().enumerate() {
            let hard = if r[(i, 0)] > 0.5 { 0 } else { 1 };
            assert_eq!(hard == first, l == labels[0]);
        }
    }

    #[test]
    fn objective_never_increases() {
        let data = sample_truth(200, 1);
        for m in 1..=6 {
            let spec = MixtureModelSpec::new(m, 2).unwrap();
            let mut rng = substream(9, &[m as u64]);
            let init = MixtureVariationalState::from_responsibilities(
                &spec,
                &data,
                kmeans_pp_responsibilities(&data, m, &mut rng),
            )
            .unwrap();
            let fit = cavi_fit(&spec, &data, init, 200, 0.0).unwrap();
            for w in fit.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "m={m}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn relabeling_components_leaves_objective_unchanged() {
        let data = sample_truth(120, 2);
        let spec = MixtureModelSpec::new(3, 2).unwrap();
        let fit = fit_mixture(&spec, &data, &CaviConfig::default()).unwrap();
        let p = fit.state.permuted(&[2, 0, 1]);
        let e = mixture_objective(&spec, &data, &p).unwrap();
        assert!((e.total - fit.elbo.total).abs() < 1e-10 * fit.elbo.total.abs().max(1.0));
    }

    #[test]
    fn duplicating_data_doubles_expected_nll() {
        let data = sample_truth(60, 5);
        let spec = MixtureModelSpec::new(2, 2).unwrap();
        let fit = fit_mixture(&spec, &data, &CaviConfig::default()).unwrap();
        let dup = DMatrix::from_fn(120, 2, |i, j| data[(i % 60, j)]);
        let mut s = fit.state.clone();
        s.responsibilities =
            DMatrix::from_fn(120, 2, |i, k| fit.state.responsibilities[(i % 60, k)]);
        let e = mixture_objective(&spec, &dup, &s).unwrap();
        assert!((e.expected_nll - 2.0 * fit.elbo.expected_nll).abs() < 1e-9 * e.expected_nll.abs());
        let refit = fit_mixture(&spec, &dup, &CaviConfig::default()).unwrap();
        assert!(refit.elbo.total <= e.total + 1e-8);
    }

    #[test]
    fn truth_sampler_is_deterministic_and_calibrated() {
        assert_eq!(sample_truth(200, 7), sample_truth(200, 7));
        let (data, labels) = sample_truth_labeled(100_000, 8);
        for (k, w) in TRUTH_WEIGHTS.iter().enumerate() {
            let frac = labels.iter().filter(|&&l| l == k).count() as f64 / 1e5;
            assert!((frac - w).abs() < 0.01, "component {k}: {frac}");
        }
        let (mut sx, mut sy, mut c) = (0.0, 0.0, 0.0);
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 {
                sx += data[(i, 0)];
                sy += data[(i, 1)];
                c += 1.0;
            }
        }
        assert!((sx / c).abs() < 0.1 && (sy / c).abs() < 0.1);
    }

    #[test]
    fn predictive_density_integrates_to_one() {
        let data = sample_truth(200, 3);
        let grid = fit_mixture_grid(&data, &[1, 2, 3, 4], &CaviConfig::default()).unwrap();
        let h = 0.1;
        let pts: Vec<Vec<f64>> = (0..=240)
            .flat_map(|i| (0..=240).map(move |j| vec![-12.0 + h * i as f64, -12.0 + h * j as f64]))
            .collect();
        let dens = predictive_density(&grid.combined, &pts);
        assert!(dens.iter().all(|&v| v >= 0.0));
        let mut total = 0.0;
        for i in 0..=240 {
            for j in 0..=240 {
                let w = if i == 0 || i == 240 { 0.5 } else { 1.0 }
                    * if j == 0 || j == 240 { 0.5 } else { 1.0 };
                total += w * dens[i * 241 + j];
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
        // pointwise convex combination
        let x = &pts[12345];
        let direct: f64 = grid
            .combined
            .gamma
            .iter()
            .zip(&grid.combined.components)
            .map(|(g, s)| g * component_density(s, x))
            .sum();
        assert_eq!(direct, dens[12345]);
    }

    #[test]
    fn component_count_prior() {
        let c = component_count_collection(&[1, 2, 3]).unwrap();
        let lw = [0.0, -2.0 * 2f64.ln(), -3.0 * 3f64.ln()];
        let z = log_sum_exp(&lw);
        for (a, b) in c.log_alpha().iter().zip(lw) {
            assert!((a - (b - z)).abs() < 1e-12);
        }
    }
}
