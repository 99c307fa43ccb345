//! Quasi-posteriors: a Gaussian quasi-likelihood for stochastic block models,
//! a tempered Gaussian quasi-likelihood for regression with sub-Gaussian
//! noise, and finite-sample checks of the inequalities these rely on.
//!
//! SBM: for a graph on `n` nodes with adjacency `Y_ij` (`i > j`) and
//! connectivity `Omega_ij = z_i' U z_j`, the log quasi-likelihood is
//! `-sum_{i>j} (Y_ij - Omega_ij)^2`. The variational family puts independent
//! uniform intervals on the entries `U_kh` (`k <= h`) and independent
//! categorical distributions on the labels. Every expectation is closed form
//! because the quasi-likelihood is quadratic in `Omega`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deep::{
    fit_grid, FitConfig, GridFit, LikelihoodAdapter, NetArchitecture, RegressionData,
};
use crate::error::{AvbError, Result};
use crate::rng::{derive_seed, substream};
use crate::vb::{
    combine_posteriors, log_sum_exp, CombinedPosterior, ElboBreakdown, InequalityCheck,
    ModelCollection, ModelEntry, ModelId,
};

/// Minimum interval length for connectivity intervals.
pub const SBM_MIN_GAP: f64 = 1e-6;

/// An undirected simple graph stored as the strict lower triangle of its
/// adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbmData {
    n: usize,
    y: Vec<u8>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

impl SbmData {
    /// An empty graph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            y: vec![0; n * n.saturating_sub(1) / 2],
        }
    }

    /// Builds a graph from 0-based undirected edges. Self-loops are rejected;
    /// repeated edges are idempotent.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(AvbError::Config(format!(
                    "edge ({a}, {b}) references a node >= {n}"
                )));
            }
            if a == b {
                return Err(AvbError::Config(format!("self-loop at node {a}")));
            }
            g.set(a, b, true);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of node pairs `n (n - 1) / 2`.
    pub fn pair_count(&self) -> usize {
        self.y.len()
    }

    pub fn get(&self, a: usize, b: usize) -> u8 {
        if a == b {
            return 0;
        }
        let (i, j) = if a > b { (a, b) } else { (b, a) };
        self.y[tri(i, j)]
    }

    pub fn set(&mut self, a: usize, b: usize, edge: bool) {
        let (i, j) = if a > b { (a, b) } else { (b, a) };
        self.y[tri(i, j)] = edge as u8;
    }

    pub fn edge_count(&self) -> usize {
        self.y.iter().map(|&v| v as usize).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 1..self.n {
            for j in 0..i {
                if self.y[tri(i, j)] == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The same graph with node `v` renamed `perm[v]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut g = Self::empty(self.n);
        for (i, j) in self.edges() {
            g.set(perm[i], perm[j], true);
        }
        g
    }
}

/// Planted partition graph: `m` balanced communities in random order, edge
/// probability `p_in` within and `p_out` across communities.
pub fn planted_partition(
    n: usize,
    m: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(SbmData, Vec<usize>)> {
    if m == 0 || m > n {
        return Err(AvbError::Config(format!(
            "cannot plant {m} communities on {n} nodes"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(AvbError::Config(
            "edge probabilities must lie in [0, 1]".into(),
        ));
    }
    let mut rng = substream(seed, &[]);
    let mut labels: Vec<usize> = (0..n).map(|i| i * m / n).collect();
    labels.shuffle(&mut rng);
    let mut g = SbmData::empty(n);
    for i in 1..n {
        for j in 0..i {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            g.y[tri(i, j)] = (rng.random::<f64>() < p) as u8;
        }
    }
    Ok((g, labels))
}

/// `-sum_{i>j} (Y_ij - z_i' U z_j)^2` for hard labels `z` and a symmetric
/// `m x m` connectivity matrix `u` (row-major).
pub fn sbm_quasi_loglik(data: &SbmData, u: &[f64], m: usize, labels: &[usize]) -> Result<f64> {
    if u.len() != m * m {
        return Err(AvbError::shape("connectivity matrix", m * m, u.len()));
    }
    if labels.len() != data.n {
        return Err(AvbError::shape("labels", data.n, labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= m) {
        return Err(AvbError::Config(format!("label {l} outside 0..{m}")));
    }
    let mut s = 0.0;
    for i in 1..data.n {
        for j in 0..i {
            let r = data.y[tri(i, j)] as f64 - u[labels[i] * m + labels[j]];
            s += r * r;
        }
    }
    Ok(-s)
}

/// Prior over community counts `alpha_m ∝ exp(-b0 (m^2 log n + n log m))`.
pub fn sbm_log_prior_weights(ms: &[usize], n: usize, b0: f64) -> Vec<f64> {
    let nf = n as f64;
    ms.iter()
        .map(|&m| {
            let mf = m as f64;
            -b0 * (mf * mf * nf.ln() + nf * mf.ln())
        })
        .collect()
}

pub fn sbm_model_id(m: usize) -> ModelId {
    ModelId::new(format!("sbm{m}"))
}

pub fn sbm_collection(ms: &[usize], n: usize, b0: f64) -> Result<ModelCollection> {
    let nf = n as f64;
    let models = ms
        .iter()
        .map(|&m| {
            let mf = m as f64;
            ModelEntry {
                id: sbm_model_id(m),
                complexity: ((mf * mf * nf.ln() + nf * mf.ln()) / nf).sqrt(),
            }
        })
        .collect();
    let mut c = ModelCollection::from_log_weights(models, &sbm_log_prior_weights(ms, n, b0))?;
    c.b0 = b0;
    Ok(c)
}

/// Mean-field state: intervals `[lo_kh, hi_kh]` (symmetric `m x m`,
/// row-major) and label probabilities `nu` (`n x m`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmVariationalState {
    pub m: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nu: Vec<f64>,
}

impl SbmVariationalState {
    pub fn n(&self) -> usize {
        self.nu.len() / self.m
    }

    pub fn label_probs(&self, i: usize) -> &[f64] {
        &self.nu[i * self.m..(i + 1) * self.m]
    }

    /// `argmax_k nu_ik` per node, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let p = self.label_probs(i);
                (0..self.m).fold(0, |b, k| if p[k] > p[b] { k } else { b })
            })
            .collect()
    }

    /// Interval midpoints, i.e. `E[U]`.
    pub fn mean_connectivity(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let eu = self.mean_connectivity();
        let eu2 = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (l * l + l * h + h * h) / 3.0)
            .collect();
        (eu, eu2)
    }

    /// Reorders communities so their expected sizes `sum_i nu_ik` decrease.
    pub fn sorted_by_size(&self) -> Self {
        let m = self.m;
        let n = self.n();
        let sizes: Vec<f64> = (0..m)
            .map(|k| (0..n).map(|i| self.nu[i * m + k]).sum())
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(a.cmp(&b)));
        self.permuted(&order)
    }

    /// New community `k` is old community `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let n = self.n();
        let mut out = self.clone();
        for k in 0..m {
            for h in 0..m {
                out.lo[k * m + h] = self.lo[perm[k] * m + perm[h]];
                out.hi[k * m + h] = self.hi[perm[k] * m + perm[h]];
            }
        }
        for i in 0..n {
            for k in 0..m {
                out.nu[i * m + k] = self.nu[i * m + perm[k]];
            }
        }
        out
    }

    fn validate(&self, data: &SbmData) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(AvbError::Config("SBM needs at least one community".into()));
        }
        if self.lo.len() != m * m || self.hi.len() != m * m {
            return Err(AvbError::shape(
                "connectivity intervals",
                m * m,
                self.lo.len(),
            ));
        }
        if self.nu.len() != data.n * m {
            return Err(AvbError::shape(
                "label probabilities",
                data.n * m,
                self.nu.len(),
            ));
        }
        for k in 0..m {
            for h in 0..m {
                let (l, u) = (self.lo[k * m + h], self.hi[k * m + h]);
                if !(0.0 <= l && l < u && u <= 1.0) {
                    return Err(AvbError::DegenerateBox {
                        coord: k * m + h,
                        lo: l,
                        hi: u,
                    });
                }
                if l != self.lo[h * m + k] || u != self.hi[h * m + k] {
                    return Err(AvbError::Config(
                        "connectivity intervals must be symmetric".into(),
                    ));
                }
            }
        }
        for i in 0..data.n {
            let s: f64 = self.label_probs(i).iter().sum();
            if (s - 1.0).abs() > 1e-9 || self.label_probs(i).iter().any(|p| !(*p >= 0.0)) {
                return Err(AvbError::Config(format!(
                    "label probabilities of node {i} are not a distribution"
                )));
            }
        }
        Ok(())
    }
}

/// Objective `E_q[sum_{i>j} (Y_ij - Omega_ij)^2] + KL(q || prior)`, exact.
pub fn sbm_objective(data: &SbmData, state: &SbmVariationalState) -> Result<ElboBreakdown> {
    state.validate(data)?;
    let m = state.m;
    let n = data.n;
    let (eu, eu2) = state.moments();
    let mut nll = 0.0;
    for i in 1..n {
        let pi = state.label_probs(i);
        for j in 0..i {
            let pj = state.label_probs(j);
            let y = data.y[tri(i, j)] as f64;
            let mut e = 0.0;
            for k in 0..m {
                for h in 0..m {
                    e += pi[k] * pj[h] * (y - 2.0 * y * eu[k * m + h] + eu2[k * m + h]);
                }
            }
            nll += e;
        }
    }
    let mut kl = 0.0;
    for k in 0..m {
        for h in k..m {
            kl -= (state.hi[k * m + h] - state.lo[k * m + h]).ln();
        }
    }
    let log_m = (m as f64).ln();
    for &p in &state.nu {
        if p > 0.0 {
            kl += p * (p.ln() + log_m);
        }
    }
    let e = ElboBreakdown::exact(nll, kl);
    if !e.is_finite() {
        return Err(AvbError::NonFiniteObjective(format!(
            "SBM objective (nll {nll}, kl {kl})"
        )));
    }
    Ok(e)
}

/// Gauss-Seidel pass over nodes: each `nu_i` is set to its exact minimizer
/// given all other factors.
fn update_labels(data: &SbmData, state: &mut SbmVariationalState) {
    let m = state.m;
    let (eu, eu2) = state.moments();
    let mut a = vec![0.0; m];
    for i in 0..data.n {
        a.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..data.n {
            if j == i {
                continue;
            }
            let y = data.get(i, j) as f64;
            let pj = &state.nu[j * m..(j + 1) * m];
            for k in 0..m {
                let mut s = 0.0;
                for h in 0..m {
                    s += pj[h] * (eu2[k * m + h] - 2.0 * y * eu[k * m + h]);
                }
                a[k] -= s;
            }
        }
        let lse = log_sum_exp(&a);
        for k in 0..m {
            state.nu[i * m + k] = (a[k] - lse).exp();
        }
    }
}

/// Per-block sufficient statistics: total pair weight and weighted edge count.
fn block_stats(data: &SbmData, state: &SbmVariationalState) -> (Vec<f64>, Vec<f64>) {
    let m = state.m;
    let mut s0 = vec![0.0; m * m];
    let mut s1 = vec![0.0; m * m];
    for i in 1..data.n {
        let pi = state.label_probs(i);
        for j in 0..i {
            let pj = state.label_probs(j);
            let y = data.y[tri(i, j)] as f64;
            for k in 0..m {
                for h in 0..m {
                    let (a, b) = if k <= h { (k, h) } else { (h, k) };
                    let w = pi[k] * pj[h];
                    s0[a * m + b] += w;
                    s1[a * m + b] += w * y;
                }
            }
        }
    }
    (s0, s1)
}

fn block_value(s0: f64, s1: f64, lo: f64, hi: f64) -> f64 {
    s0 * (lo * lo + lo * hi + hi * hi) / 3.0 - s1 * (lo + hi) - (hi - lo).ln()
}

fn project_interval(lo: f64, hi: f64) -> (f64, f64) {
    let (mut l, mut h) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
    if h - l < SBM_MIN_GAP {
        let mid = (0.5 * (l + h)).clamp(0.5 * SBM_MIN_GAP, 1.0 - 0.5 * SBM_MIN_GAP);
        l = mid - 0.5 * SBM_MIN_GAP;
        h = mid + 0.5 * SBM_MIN_GAP;
    }
    (l, h)
}

/// Minimizes one block's convex objective over the feasible intervals: the
/// unconstrained optimum when it is feasible, otherwise projected gradient
/// descent with Armijo backtracking.
fn update_block(s0: f64, s1: f64, lo: f64, hi: f64) -> (f64, f64) {
    if s0 <= 1e-300 {
        return (0.0, 1.0);
    }
    let c = s1 / s0;
    let w = (6.0 / s0).sqrt();
    if c - 0.5 * w >= 0.0 && c + 0.5 * w <= 1.0 {
        return (c - 0.5 * w, c + 0.5 * w);
    }
    let (mut l, mut h) = (lo, hi);
    let mut f = block_value(s0, s1, l, h);
    let mut step = 1.0 / (s0 + 1.0);
    for _ in 0..500 {
        let inv = 1.0 / (h - l);
        let gl = s0 * (2.0 * l + h) / 3.0 - s1 + inv;
        let gh = s0 * (l + 2.0 * h) / 3.0 - s1 - inv;
        let mut accepted = false;
        for _ in 0..60 {
            let (nl, nh) = project_interval(l - step * gl, h - step * gh);
            let fnew = block_value(s0, s1, nl, nh);
            let decrease = gl * (nl - l) + gh * (nh - h);
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease {
                let moved = (nl - l).abs() + (nh - h).abs();
                l = nl;
                h = nh;
                f = fnew;
                accepted = moved > 1e-15;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (l, h)
}

fn update_intervals(data: &SbmData, state: &mut SbmVariationalState) {
    let m = state.m;
    let (s0, s1) = block_stats(data, state);
    for k in 0..m {
        for h in k..m {
            let idx = k * m + h;
            let (l, u) = update_block(s0[idx], s1[idx], state.lo[idx], state.hi[idx]);
            state.lo[idx] = l;
            state.hi[idx] = u;
            state.lo[h * m + k] = l;
            state.hi[h * m + k] = u;
        }
    }
}

/// A state with the given label probabilities and the optimal intervals for
/// them.
pub fn sbm_state_from_labels(
    data: &SbmData,
    m: usize,
    nu: Vec<f64>,
) -> Result<SbmVariationalState> {
    let mut state = SbmVariationalState {
        m,
        lo: vec![0.25; m * m],
        hi: vec![0.75; m * m],
        nu,
    };
    state.validate(data)?;
    update_intervals(data, &mut state);
    Ok(state)
}

/// Random label probabilities (flat Dirichlet per node).
pub fn random_label_probs(n: usize, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut nu = Vec::with_capacity(n * m);
    for _ in 0..n {
        let e: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = e.iter().sum();
        nu.extend(e.iter().map(|x| x / s));
    }
    nu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmFit {
    pub state: SbmVariationalState,
    pub elbo: ElboBreakdown,
    pub trace: Vec<f64>,
}

/// Block-coordinate descent from `init`: each sweep updates all label
/// probabilities node by node, then all intervals. Stops after `iters`
/// sweeps or when the objective changes by less than `tol` (relative).
pub fn sbm_fit(
    data: &SbmData,
    init: SbmVariationalState,
    iters: usize,
    tol: f64,
) -> Result<SbmFit> {
    let mut state = init;
    let mut elbo = sbm_objective(data, &state)?;
    let mut trace = vec![elbo.total];
    for it in 1..=iters {
        update_labels(data, &mut state);
        update_intervals(data, &mut state);
        let next = sbm_objective(data, &state).map_err(|e| AvbError::NumericalBreakdown {
            iteration: it,
            reason: e.to_string(),
        })?;
        let delta = elbo.total - next.total;
        elbo = next;
        trace.push(elbo.total);
        if delta.abs() < tol * elbo.total.abs().max(1.0) {
            break;
        }
    }
    Ok(SbmFit {
        state: state.sorted_by_size(),
        elbo,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub restarts: usize,
    pub iters: usize,
    pub tol: f64,
    pub b0: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            iters: 200,
            tol: 1e-10,
            b0: 1.0,
            seed: 0,
        }
    }
}

/// Label probabilities from spectral clustering: rows of the leading `m`
/// eigenvectors (by absolute eigenvalue) of the adjacency matrix, clustered
/// by k-means. Each node gets probability `0.9` on its cluster.
pub fn spectral_label_probs(data: &SbmData, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.n;
    if m == 1 {
        return vec![1.0; n];
    }
    let a = DMatrix::from_fn(n, n, |i, j| data.get(i, j) as f64);
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .abs()
            .total_cmp(&eig.eigenvalues[x].abs())
    });
    let k = m.min(n);
    let embed = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])]);
    let labels = kmeans(&embed, m, rng);
    let hi = if m > 1 { 0.9 } else { 1.0 };
    let lo = (1.0 - hi) / (m as f64 - 1.0).max(1.0);
    let mut nu = vec![lo; n * m];
    for (i, &l) in labels.iter().enumerate() {
        nu[i * m + l] = hi;
    }
    nu
}

/// Lloyd's algorithm from a k-means++ seeding.
fn kmeans(points: &DMatrix<f64>, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = points.nrows();
    let resp = crate::mixture::kmeans_pp_responsibilities(points, m, rng);
    let mut labels: Vec<usize> = (0..n)
        .map(|i| (0..m).find(|&k| resp[(i, k)] == 1.0).unwrap_or(0))
        .collect();
    for _ in 0..100 {
        let mut centers = DMatrix::zeros(m, points.ncols());
        let mut counts = vec![0.0; m];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = centers.row_mut(l);
            row += points.row(i);
            counts[l] += 1.0;
        }
        for k in 0..m {
            if counts[k] > 0.0 {
                let mut row = centers.row_mut(k);
                row /= counts[k];
            }
        }
        let next: Vec<usize> = (0..n)
            .map(|i| {
                (0..m)
                    .filter(|&k| counts[k] > 0.0)
                    .min_by(|&a, &b| {
                        (points.row(i) - centers.row(a))
                            .norm_squared()
                            .total_cmp(&(points.row(i) - centers.row(b)).norm_squared())
                    })
                    .unwrap_or(labels[i])
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Best of `config.restarts` fits: the first starts from a spectral
/// clustering, the rest from random label probabilities.
pub fn sbm_fit_restarts(data: &SbmData, m: usize, config: &SbmConfig) -> Result<SbmFit> {
    let mut best: Option<SbmFit> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = substream(config.seed, &[r as u64]);
        let nu = if r == 0 {
            spectral_label_probs(data, m, &mut rng)
        } else {
            random_label_probs(data.n, m, &mut rng)
        };
        let init = sbm_state_from_labels(data, m, nu)?;
        let fit = sbm_fit(data, init, config.iters, config.tol)?;
        if best.as_ref().is_none_or(|b| fit.elbo.total < b.elbo.total) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmGridFit {
    pub collection: ModelCollection,
    pub combined: CombinedPosterior<SbmVariationalState>,
    pub traces: Vec<Vec<f64>>,
    pub failures: Vec<(usize, String)>,
}

/// Fits each community count in parallel and combines them.
pub fn fit_sbm_grid(data: &SbmData, ms: &[usize], config: &SbmConfig) -> Result<SbmGridFit> {
    let collection = sbm_collection(ms, data.n, config.b0)?;
    let results: Vec<Result<SbmFit>> = ms
        .par_iter()
        .map(|&m| {
            let cfg = SbmConfig {
                seed: derive_seed(config.seed, &[m as u64]),
                ..*config
            };
            sbm_fit_restarts(data, m, &cfg)
        })
        .collect();
    let mut keep = Vec::new();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                keep.push(i);
                fits.push(f);
            }
            Err(e) => {
                log::warn!("dropping SBM with m = {}: {e}", ms[i]);
                failures.push((ms[i], e.to_string()));
            }
        }
    }
    if keep.is_empty() {
        return Err(AvbError::Config("every SBM fit failed".into()));
    }
    let collection = collection.restrict(&keep)?;
    let traces = fits.iter().map(|f| f.trace.clone()).collect();
    let combined = combine_posteriors(
        &collection,
        keep.iter()
            .zip(fits)
            .map(|(&i, f)| (sbm_model_id(ms[i]), f.state, f.elbo)),
    )?;
    Ok(SbmGridFit {
        collection,
        combined,
        traces,
        failures,
    })
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len())
        .rev()
        .find(|&j| p[j] > p[i - 1])
        .expect("suffix has a larger element");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Fraction of nodes labeled correctly under the best relabeling of
/// `estimated`. At most 8 distinct labels.
pub fn label_accuracy(estimated: &[usize], truth: &[usize]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(AvbError::shape("labels", truth.len(), estimated.len()));
    }
    if truth.is_empty() {
        return Ok(1.0);
    }
    let k = estimated.iter().chain(truth).max().map_or(0, |&x| x + 1);
    if k > 8 {
        return Err(AvbError::Capacity(format!(
            "{k} labels; at most 8 supported"
        )));
    }
    let mut confusion = vec![0usize; k * k];
    for (&e, &t) in estimated.iter().zip(truth) {
        confusion[e * k + t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    loop {
        let hits: usize = (0..k).map(|e| confusion[e * k + perm[e]]).sum();
        best = best.max(hits);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best as f64 / truth.len() as f64)
}

fn check_pair(omega0: &[f64], omega1: &[f64]) -> Result<()> {
    if omega0.len() != omega1.len() {
        return Err(AvbError::shape(
            "connectivity arrays",
            omega0.len(),
            omega1.len(),
        ));
    }
    if omega0
        .iter()
        .chain(omega1)
        .any(|p| !(0.0..=1.0).contains(p))
    {
        return Err(AvbError::Config("connectivities must lie in [0, 1]".into()));
    }
    Ok(())
}

/// `E_{Y ~ Bern(w0)} exp(t [(Y - w0)^2 - (Y - w1)^2])`, exactly.
fn two_point(w0: f64, w1: f64, t: f64) -> f64 {
    let at = |y: f64| (t * ((y - w0).powi(2) - (y - w1).powi(2))).exp();
    (1.0 - w0) * at(0.0) + w0 * at(1.0)
}

/// `E_{Omega0}[q(Omega1) / q(Omega0)]` against `exp(-sum (Omega0 - Omega1)^2 / 2)`,
/// both exact (the expectation is a product of two-point expectations).
pub fn sbm_learning_inequality_check(omega0: &[f64], omega1: &[f64]) -> Result<InequalityCheck> {
    check_pair(omega0, omega1)?;
    let mut log_lhs = 0.0;
    let mut sq = 0.0;
    for (&a, &b) in omega0.iter().zip(omega1) {
        log_lhs += two_point(a, b, 1.0).ln();
        sq += (a - b) * (a - b);
    }
    let (lhs, rhs) = (log_lhs.exp(), (-0.5 * sq).exp());
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// `E_{Omega0}[(q(Omega0) / q(Omega1))^rho]` against
/// `exp(rho (rho + 2) / 2 * sum (Omega0 - Omega1)^2)`, exact.
pub fn sbm_moment_bound_check(omega0: &[f64], omega1: &[f64], rho: f64) -> Result<InequalityCheck> {
    check_pair(omega0, omega1)?;
    if !(rho > 0.0) {
        return Err(AvbError::Config("moment order must be positive".into()));
    }
    let mut log_lhs = 0.0;
    let mut sq = 0.0;
    for (&a, &b) in omega0.iter().zip(omega1) {
        log_lhs += two_point(a, b, -rho).ln();
        sq += (a - b) * (a - b);
    }
    let (lhs, rhs) = (log_lhs.exp(), (0.5 * rho * (rho + 2.0) * sq).exp());
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// Centered noise for the sub-Gaussian check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian {
        sd: f64,
    },
    /// `Unif(-half_width, half_width)`.
    Uniform {
        half_width: f64,
    },
    /// `+-scale` with equal probability.
    Rademacher {
        scale: f64,
    },
}

impl NoiseModel {
    /// A variance proxy `varsigma^2`: the variance for Gaussian noise, the
    /// Hoeffding constant `h^2` for bounded noise on `[-h, h]`.
    pub fn variance_proxy(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sd } => sd * sd,
            NoiseModel::Uniform { half_width } => half_width * half_width,
            NoiseModel::Rademacher { scale } => scale * scale,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            NoiseModel::Gaussian { sd } => Normal::new(0.0, sd).map_or(0.0, |d| d.sample(rng)),
            NoiseModel::Uniform { half_width } => {
                Uniform::new_inclusive(-half_width, half_width).map_or(0.0, |d| d.sample(rng))
            }
            NoiseModel::Rademacher { scale } => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubGaussCheck {
    /// Estimate (or exact value) of `E[q_kappa(f) / q_kappa(f*)]`.
    pub lhs: f64,
    /// `exp(-kappa (1 - kappa varsigma^2) / 2 * sum (f - f*)^2)`.
    pub rhs: f64,
    /// Monte Carlo standard error of `lhs`; zero when exact.
    pub std_error: f64,
    /// `(rhs - lhs) / std_error`, infinite when exact and the bound holds.
    pub margin: f64,
    pub exact: bool,
}

impl SubGaussCheck {
    /// Holds within `k` standard errors (or exactly, up to rounding).
    pub fn holds_within(&self, k: f64) -> bool {
        if self.exact {
            self.lhs <= self.rhs * (1.0 + 1e-12)
        } else {
            self.lhs <= self.rhs + k * self.std_error
        }
    }
}

/// Checks the tempered-likelihood ratio bound for regression with
/// sub-Gaussian noise of variance proxy `varsigma2`. Gaussian noise uses the
/// closed form `exp(-kappa (1 - kappa sd^2) / 2 * sum (f - f*)^2)`; other noise
/// is estimated from `mc` draws.
pub fn subgauss_inequality_check(
    f: &[f64],
    f_star: &[f64],
    kappa: f64,
    varsigma2: f64,
    noise: NoiseModel,
    mc: usize,
    rng: &mut impl Rng,
) -> Result<SubGaussCheck> {
    if f.len() != f_star.len() {
        return Err(AvbError::shape(
            "regression functions",
            f_star.len(),
            f.len(),
        ));
    }
    if !(kappa > 0.0) || !(varsigma2 > 0.0) {
        return Err(AvbError::Config(
            "kappa and the variance proxy must be positive".into(),
        ));
    }
    let sq: f64 = f.iter().zip(f_star).map(|(a, b)| (a - b) * (a - b)).sum();
    let rhs = (-0.5 * kappa * (1.0 - kappa * varsigma2) * sq).exp();
    if let NoiseModel::Gaussian { sd } = noise {
        let lhs = (-0.5 * kappa * (1.0 - kappa * sd * sd) * sq).exp();
        let margin = if lhs <= rhs * (1.0 + 1e-12) {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        return Ok(SubGaussCheck {
            lhs,
            rhs,
            std_error: 0.0,
            margin,
            exact: true,
        });
    }
    if mc < 2 {
        return Err(AvbError::Config(
            "need at least two Monte Carlo draws".into(),
        ));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc {
        let mut log_ratio = 0.0;
        for (&a, &b) in f.iter().zip(f_star) {
            let y = b + noise.sample(rng);
            log_ratio -= 0.5 * kappa * ((y - a).powi(2) - (y - b).powi(2));
        }
        let r = log_ratio.exp();
        sum += r;
        sum_sq += r * r;
    }
    let mcf = mc as f64;
    let lhs = sum / mcf;
    let var = ((sum_sq / mcf - lhs * lhs) * mcf / (mcf - 1.0)).max(0.0);
    let std_error = (var / mcf).sqrt();
    let margin = if std_error > 0.0 {
        (rhs - lhs) / std_error
    } else if lhs <= rhs {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    Ok(SubGaussCheck {
        lhs,
        rhs,
        std_error,
        margin,
        exact: false,
    })
}

/// Gaussian regression tempered by a learning rate: log quasi-likelihood
/// `-(kappa / 2) sum (y_i - f(x_i))^2`.
#[derive(Debug, Clone)]
pub struct QuasiRegressionAdapter {
    pub kappa: f64,
    /// Variance proxy of the noise, when known; used only for the validity flag.
    pub variance_proxy: Option<f64>,
    pub adapter: LikelihoodAdapter,
}

impl QuasiRegressionAdapter {
    pub fn new(data: RegressionData, kappa: f64, variance_proxy: Option<f64>) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(AvbError::Config(format!(
                "learning rate kappa = {kappa} must be positive"
            )));
        }
        if let Some(v) = variance_proxy {
            if !(v > 0.0) {
                return Err(AvbError::Config("variance proxy must be positive".into()));
            }
        }
        Ok(Self {
            kappa,
            variance_proxy,
            adapter: LikelihoodAdapter::quasi_gaussian(data, kappa)?,
        })
    }

    /// `kappa < 1 / varsigma^2`, when the variance proxy is known.
    pub fn is_valid(&self) -> Option<bool> {
        self.variance_proxy.map(|v| self.kappa < 1.0 / v)
    }
}

/// Fits every architecture under the tempered quasi-likelihood and combines
/// them.
pub fn quasi_fit_deep(
    grid: &[NetArchitecture],
    adapter: &QuasiRegressionAdapter,
    config: &FitConfig,
    b0: f64,
) -> Result<GridFit> {
    if adapter.is_valid() == Some(false) {
        log::warn!(
            "kappa = {} is not below 1 / varsigma^2; the quasi-posterior guarantees do not apply",
            adapter.kappa
        );
    }
    fit_grid(grid, &adapter.adapter, config, b0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quasi_loglik_examples() {
        let g = SbmData::from_edges(2, &[(1, 0)]).unwrap();
        assert_eq!(sbm_quasi_loglik(&g, &[0.5], 1, &[0, 0]).unwrap(), -0.25);
        let (g, labels) = planted_partition(12, 2, 1.0, 0.0, 1).unwrap();
        assert_eq!(
            sbm_quasi_loglik(&g, &[1.0, 0.0, 0.0, 1.0], 2, &labels).unwrap(),
            0.0
        );
    }

    #[test]
    fn quasi_loglik_matches_double_loop() {
        let (g, _) = planted_partition(15, 3, 0.7, 0.2, 2).unwrap();
        let mut rng = substream(3, &[]);
        let labels: Vec<usize> = (0..15).map(|_| rng.random_range(0..3)).collect();
        let mut u = vec![0.0; 9];
        for k in 0..3 {
            for h in k..3 {
                let v: f64 = rng.random();
                u[k * 3 + h] = v;
                u[h * 3 + k] = v;
            }
        }
        let mut direct = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                if i > j {
                    let r = g.get(i, j) as f64 - u[labels[i] * 3 + labels[j]];
                    direct -= r * r;
                }
            }
        }
        let got = sbm_quasi_loglik(&g, &u, 3, &labels).unwrap();
        assert!((got - direct).abs() < 1e-12);
        // relabel communities consistently
        let perm = [2, 0, 1];
        let labels2: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let mut u2 = vec![0.0; 9];
        for k in 0..3 {
            for h in 0..3 {
                u2[perm[k] * 3 + perm[h]] = u[k * 3 + h];
            }
        }
        assert!((sbm_quasi_loglik(&g, &u2, 3, &labels2).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn prior_weights_match_formula() {
        let lw = sbm_log_prior_weights(&[1, 2, 3], 40, 0.5);
        assert!((lw[1] - (-0.5 * (4.0 * 40f64.ln() + 40.0 * 2f64.ln()))).abs() < 1e-12);
        let c = sbm_collection(&[1, 2, 3], 40, 0.5).unwrap();
        let z = log_sum_exp(&lw);
        for (a, b) in c.log_alpha().iter().zip(&lw) {
            assert!((a - (b - z)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_fit_is_monotone_and_centered_on_density() {
        let (g, _) = planted_partition(30, 1, 0.3, 0.3, 4).unwrap();
        let init = sbm_state_from_labels(&g, 1, vec![1.0; 30]).unwrap();
        let fit = sbm_fit(&g, init, 20, 0.0).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
        let density = g.edge_count() as f64 / g.pair_count() as f64;
        assert!((fit.state.mean_connectivity()[0] - density).abs() < 1e-9);
    }

    #[test]
    fn sweeps_never_increase_the_objective() {
        let (g, _) = planted_partition(30, 3, 0.8, 0.2, 5).unwrap();
        for m in 1..=4 {
            let mut rng = substream(6, &[m as u64]);
            let init = sbm_state_from_labels(&g, m, random_label_probs(30, m, &mut rng)).unwrap();
            let fit = sbm_fit(&g, init, 50, 0.0).unwrap();
            for w in fit.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "m={m}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn relabeling_nodes_leaves_objective_unchanged() {
        let (g, _) = planted_partition(20, 2, 0.9, 0.1, 7).unwrap();
        let mut rng = substream(8, &[]);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let g2 = g.relabeled(&perm);
        let nu = random_label_probs(20, 2, &mut rng);
        let mut nu2 = vec![0.0; 40];
        for v in 0..20 {
            nu2[perm[v] * 2..perm[v] * 2 + 2].copy_from_slice(&nu[v * 2..v * 2 + 2]);
        }
        let a = sbm_state_from_labels(&g, 2, nu).unwrap();
        let b = sbm_state_from_labels(&g2, 2, nu2).unwrap();
        let (ea, eb) = (
            sbm_objective(&g, &a).unwrap(),
            sbm_objective(&g2, &b).unwrap(),
        );
        assert!((ea.total - eb.total).abs() < 1e-10 * ea.total.abs());
        for (x, y) in a.lo.iter().zip(&b.lo).chain(a.hi.iter().zip(&b.hi)) {
            assert!((x - y).abs() < 1e-10);
        }
        // one label update from each relabeled state agrees row by row
        let (mut a1, mut b1) = (a.clone(), b.clone());
        update_labels(&g, &mut a1);
        update_labels(&g2, &mut b1);
        let (ea, eb) = (
            sbm_objective(&g, &a1).unwrap(),
            sbm_objective(&g2, &b1).unwrap(),
        );
        assert!(ea.total <= sbm_objective(&g, &a).unwrap().total + 1e-8);
        assert!(eb.total <= sbm_objective(&g2, &b).unwrap().total + 1e-8);
    }

    #[test]
    fn planted_two_blocks_are_recovered() {
        for seed in 0..10 {
            let (g, truth) = planted_partition(40, 2, 0.9, 0.1, seed).unwrap();
            let fit = sbm_fit_restarts(
                &g,
                2,
                &SbmConfig {
                    seed,
                    ..SbmConfig::default()
                },
            )
            .unwrap();
            let acc = label_accuracy(&fit.state.hard_labels(), &truth).unwrap();
            assert!(acc >= 0.95, "seed {seed}: accuracy {acc}");
        }
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        assert_eq!(label_accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(label_accuracy(&[0, 0, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(label_accuracy(&[2, 0, 1], &[0, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn learning_inequality_examples() {
        let c = sbm_learning_inequality_check(&[0.3, 0.6], &[0.3, 0.6]).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-15 && (c.rhs - 1.0).abs() < 1e-15 && c.holds);
        let c = sbm_learning_inequality_check(&[0.5; 3], &[0.9; 3]).unwrap();
        assert!(c.holds && c.lhs < c.rhs);
        for rho in [0.5, 1.0, 2.0] {
            assert!(
                sbm_moment_bound_check(&[0.5; 3], &[0.9; 3], rho)
                    .unwrap()
                    .holds
            );
        }
    }

    #[test]
    fn subgaussian_check_examples() {
        let mut rng = substream(9, &[]);
        let f = vec![0.3; 10];
        let c = subgauss_inequality_check(
            &f,
            &f,
            0.5,
            1.0,
            NoiseModel::Gaussian { sd: 1.0 },
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!((c.lhs, c.rhs), (1.0, 1.0));
        // ||f - f*||^2_n = 1 with n = 10
        let f_star = vec![0.0; 10];
        let f = vec![1.0; 10];
        let c = subgauss_inequality_check(
            &f,
            &f_star,
            0.5,
            1.0,
            NoiseModel::Gaussian { sd: 1.0 },
            0,
            &mut rng,
        )
        .unwrap();
        assert!((c.lhs - (-1.25f64).exp()).abs() < 1e-15);
        assert_eq!(c.lhs, c.rhs);
        let c = subgauss_inequality_check(
            &f,
            &f_star,
            0.5,
            1.0,
            NoiseModel::Uniform { half_width: 1.0 },
            20_000,
            &mut rng,
        )
        .unwrap();
        assert!(c.holds_within(3.0), "{c:?}");
    }

    #[test]
    fn quasi_adapter_validity() {
        let d = RegressionData::new(1, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let a = QuasiRegressionAdapter::new(d.clone(), 0.5, Some(1.0)).unwrap();
        assert_eq!(a.is_valid(), Some(true));
        let a = QuasiRegressionAdapter::new(d.clone(), 1.0, Some(1.0)).unwrap();
        assert_eq!(a.is_valid(), Some(false));
        assert!(QuasiRegressionAdapter::new(d, 0.0, None).is_err());
    }
}
