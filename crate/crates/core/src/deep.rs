//! Bounded ReLU networks with uniform-box variational families.
//!
//! Each architecture `(K, M)` (depth, width) has parameter space
//! `[-B, B]^p` with a uniform prior. The variational family is a product of
//! per-coordinate uniforms `Unif(lo_j, hi_j)`, trained by reparameterized
//! stochastic gradients: `theta = lo + z * (hi - lo)`, `z ~ Unif(0, 1)^p`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AvbError, Result};
use crate::rng::{derive_seed, substream, StreamRng};
use crate::vb::{
    combine_posteriors, kl_uniform_box, CombinedPosterior, ElboBreakdown, ModelCollection,
    ModelEntry, ModelId,
};

/// A fully connected ReLU network shape with `depth - 1` hidden layers of
/// `width` units and a scalar output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetArchitecture {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub bound: f64,
}

impl NetArchitecture {
    pub fn new(depth: usize, width: usize, input_dim: usize, bound: f64) -> Result<Self> {
        if depth < 2 || width < 1 || input_dim < 1 || !(bound > 0.0) {
            return Err(AvbError::Config(format!(
                "invalid architecture K={depth} M={width} d={input_dim} B={bound}"
            )));
        }
        Ok(Self {
            depth,
            width,
            input_dim,
            bound,
        })
    }

    /// `(d + 1) M + (K - 2)(M^2 + M) + (M + 1)`.
    pub fn param_count(&self) -> usize {
        let (d, m, k) = (self.input_dim, self.width, self.depth);
        (d + 1) * m + (k - 2) * (m * m + m) + (m + 1)
    }

    /// `(inputs, outputs)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth);
        shapes.push((self.input_dim, self.width));
        for _ in 0..self.depth - 2 {
            shapes.push((self.width, self.width));
        }
        shapes.push((self.width, 1));
        shapes
    }

    /// `K (B (M + 1))^K`, a sup-norm Lipschitz constant of `theta -> net(theta)`
    /// over `[-B, B]^p` on inputs in the unit cube (for `B >= 1`).
    pub fn lipschitz_constant(&self) -> f64 {
        let k = self.depth as f64;
        k * (self.bound * (self.width as f64 + 1.0)).powi(self.depth as i32)
    }

    pub fn model_id(&self) -> ModelId {
        ModelId(format!("K{}M{}", self.depth, self.width))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(AvbError::shape(
                "network parameter",
                self.param_count(),
                theta.len(),
            ));
        }
        Ok(())
    }
}

/// Scratch buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub struct NetWorkspace {
    // post-activation inputs to each layer; acts[0] is the network input
    acts: Vec<Vec<f64>>,
    // pre-activations of each hidden layer
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl NetWorkspace {
    pub fn new(arch: &NetArchitecture) -> Self {
        let shapes = arch.layer_shapes();
        Self {
            acts: shapes.iter().map(|&(i, _)| vec![0.0; i]).collect(),
            pre: shapes.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            delta: vec![0.0; arch.width.max(1)],
            delta_next: vec![0.0; arch.width.max(arch.input_dim)],
        }
    }
}

/// Evaluates `net(theta)(x)`.
pub fn forward(arch: &NetArchitecture, theta: &[f64], x: &[f64]) -> Result<f64> {
    arch.check_theta(theta)?;
    if x.len() != arch.input_dim {
        return Err(AvbError::shape("network input", arch.input_dim, x.len()));
    }
    let mut ws = NetWorkspace::new(arch);
    Ok(forward_cached(arch, theta, x, &mut ws))
}

/// Forward pass that keeps intermediate values for [`backward`].
/// Shapes are not checked.
pub fn forward_cached(
    arch: &NetArchitecture,
    theta: &[f64],
    x: &[f64],
    ws: &mut NetWorkspace,
) -> f64 {
    let shapes = arch.layer_shapes();
    let last = shapes.len() - 1;
    ws.acts[0].copy_from_slice(x);
    let mut offset = 0;
    for (l, &(n_in, n_out)) in shapes.iter().enumerate() {
        let w = &theta[offset..offset + n_in * n_out];
        let b = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z = row
                .iter()
                .zip(&ws.acts[l])
                .fold(b[o], |acc, (wi, ai)| acc + wi * ai);
            ws.pre[l][o] = z;
        }
        if l < last {
            for o in 0..n_out {
                ws.acts[l + 1][o] = ws.pre[l][o].max(0.0);
            }
        }
    }
    ws.pre[last][0]
}

/// Accumulates `dout * d net(theta)(x) / d theta` into `grad`, using the
/// values cached by the preceding [`forward_cached`] call.
pub fn backward(
    arch: &NetArchitecture,
    theta: &[f64],
    dout: f64,
    ws: &mut NetWorkspace,
    grad: &mut [f64],
) {
    let shapes = arch.layer_shapes();
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(i, o) in &shapes {
        offsets.push(offset);
        offset += i * o + o;
    }
    ws.delta[0] = dout;
    let mut delta_len = 1;
    for l in (0..shapes.len()).rev() {
        let (n_in, n_out) = shapes[l];
        debug_assert_eq!(n_out, delta_len);
        let off = offsets[l];
        let a = &ws.acts[l];
        for o in 0..n_out {
            let d = ws.delta[o];
            if d == 0.0 {
                continue;
            }
            let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
            for (g, ai) in gw.iter_mut().zip(a) {
                *g += d * ai;
            }
            grad[off + n_in * n_out + o] += d;
        }
        if l == 0 {
            break;
        }
        // propagate through W_l and the ReLU of layer l - 1
        let w = &theta[off..off + n_in * n_out];
        for i in 0..n_in {
            let mut s = 0.0;
            for o in 0..n_out {
                s += w[o * n_in + i] * ws.delta[o];
            }
            ws.delta_next[i] = if ws.pre[l - 1][i] > 0.0 { s } else { 0.0 };
        }
        ws.delta[..n_in].copy_from_slice(&ws.delta_next[..n_in]);
        delta_len = n_in;
    }
}

/// Inputs `x_i in R^d` (row-major) with real responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl RegressionData {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 || x.len() != dim * y.len() {
            return Err(AvbError::shape("regression inputs", dim * y.len(), x.len()));
        }
        if y.is_empty() {
            return Err(AvbError::Config("regression data is empty".into()));
        }
        Ok(Self { dim, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.push(self.y[i]);
        }
        Self {
            dim: self.dim,
            x,
            y,
        }
    }
}

/// Points of one or more independent realizations of a point process on
/// `[0, 1]^d`, pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProcessData {
    pub dim: usize,
    pub realizations: usize,
    pub points: Vec<f64>,
}

impl PointProcessData {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Likelihood family applied to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Likelihood {
    /// `N(f(x), 1)` responses.
    GaussianRegression,
    /// Tempered Gaussian quasi-likelihood `exp(-kappa/2 (y - f(x))^2)`.
    QuasiGaussian { kappa: f64 },
    /// Bernoulli labels with success probability `clamp(f(x), t, 1 - t)`.
    BernoulliClassification { truncation: f64 },
    /// Poisson process with intensity `clamp(f(x), min, max)` relative to a
    /// unit-rate process; the integral uses a midpoint grid.
    PoissonProcess {
        intensity_min: f64,
        intensity_max: f64,
        resolution: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dataset {
    Regression(RegressionData),
    PointProcess(PointProcessData),
}

/// A likelihood bound to its data.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodAdapter {
    pub kind: Likelihood,
    pub data: Dataset,
    // midpoint quadrature nodes for point processes
    nodes: Vec<f64>,
}

impl LikelihoodAdapter {
    pub fn new(kind: Likelihood, data: Dataset) -> Result<Self> {
        let mut nodes = Vec::new();
        match (&kind, &data) {
            (Likelihood::GaussianRegression, Dataset::Regression(_)) => {}
            (Likelihood::QuasiGaussian { kappa }, Dataset::Regression(_)) => {
                if !(*kappa > 0.0) {
                    return Err(AvbError::Config(
                        "learning rate kappa must be positive".into(),
                    ));
                }
            }
            (Likelihood::BernoulliClassification { truncation }, Dataset::Regression(d)) => {
                if !(*truncation > 0.0 && *truncation < 0.5) {
                    return Err(AvbError::Config("truncation must lie in (0, 1/2)".into()));
                }
                if d.y.iter().any(|&y| y != 0.0 && y != 1.0) {
                    return Err(AvbError::Config(
                        "classification labels must be 0 or 1".into(),
                    ));
                }
            }
            (
                Likelihood::PoissonProcess {
                    intensity_min,
                    intensity_max,
                    resolution,
                },
                Dataset::PointProcess(d),
            ) => {
                if !(*intensity_min > 0.0 && intensity_min < intensity_max) {
                    return Err(AvbError::Config(
                        "need 0 < intensity_min < intensity_max".into(),
                    ));
                }
                if *resolution < 2 {
                    return Err(AvbError::Config(
                        "quadrature resolution must be >= 2".into(),
                    ));
                }
                if d.realizations == 0 {
                    return Err(AvbError::Config("need at least one realization".into()));
                }
                nodes = midpoint_grid(d.dim, *resolution);
            }
            _ => {
                return Err(AvbError::Config(
                    "likelihood and dataset kinds do not match".into(),
                ))
            }
        }
        Ok(Self { kind, data, nodes })
    }

    pub fn gaussian(data: RegressionData) -> Self {
        Self::new(Likelihood::GaussianRegression, Dataset::Regression(data))
            .expect("gaussian adapter accepts any regression data")
    }

    pub fn quasi_gaussian(data: RegressionData, kappa: f64) -> Result<Self> {
        Self::new(
            Likelihood::QuasiGaussian { kappa },
            Dataset::Regression(data),
        )
    }

    pub fn input_dim(&self) -> usize {
        match &self.data {
            Dataset::Regression(d) => d.dim,
            Dataset::PointProcess(d) => d.dim,
        }
    }

    /// Number of terms that mini-batches subsample (0 for point processes,
    /// which are always evaluated in full).
    pub fn batchable_len(&self) -> usize {
        match &self.data {
            Dataset::Regression(d) => d.len(),
            Dataset::PointProcess(_) => 0,
        }
    }

    /// Full-data log-likelihood of `net(theta)`.
    pub fn log_likelihood(&self, arch: &NetArchitecture, theta: &[f64]) -> Result<f64> {
        arch.check_theta(theta)?;
        if arch.input_dim != self.input_dim() {
            return Err(AvbError::shape(
                "input dimension",
                self.input_dim(),
                arch.input_dim,
            ));
        }
        let mut ws = NetWorkspace::new(arch);
        let v = self.eval(arch, theta, None, &mut ws, None);
        if !v.is_finite() {
            return Err(AvbError::NonFiniteObjective(format!("log-likelihood {v}")));
        }
        Ok(v)
    }

    /// Log-likelihood (rescaled to the full data size when `batch` is given)
    /// and, when `grad` is supplied, its gradient accumulated into `grad`.
    pub fn eval(
        &self,
        arch: &NetArchitecture,
        theta: &[f64],
        batch: Option<&[usize]>,
        ws: &mut NetWorkspace,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        match (&self.kind, &self.data) {
            (
                Likelihood::PoissonProcess {
                    intensity_min,
                    intensity_max,
                    resolution,
                },
                Dataset::PointProcess(d),
            ) => {
                let clamp = |f: f64| f.clamp(*intensity_min, *intensity_max);
                let inside = |f: f64| f > *intensity_min && f < *intensity_max;
                let mut ll = 0.0;
                for x in d.points.chunks(d.dim) {
                    let f = forward_cached(arch, theta, x, ws);
                    ll += clamp(f).ln();
                    if let Some(g) = grad.as_deref_mut() {
                        if inside(f) {
                            backward(arch, theta, 1.0 / f, ws, g);
                        }
                    }
                }
                let cell = (*resolution as f64).powi(-(d.dim as i32));
                let r = d.realizations as f64;
                let mut integral = 0.0;
                for x in self.nodes.chunks(d.dim) {
                    let f = forward_cached(arch, theta, x, ws);
                    integral += clamp(f) * cell;
                    if let Some(g) = grad.as_deref_mut() {
                        if inside(f) {
                            backward(arch, theta, -r * cell, ws, g);
                        }
                    }
                }
                ll - r * (integral - 1.0)
            }
            (kind, Dataset::Regression(d)) => {
                let n = d.len();
                let all: Vec<usize>;
                let idx = match batch {
                    Some(b) => b,
                    None => {
                        all = (0..n).collect();
                        &all
                    }
                };
                let scale = n as f64 / idx.len() as f64;
                let mut ll = 0.0;
                for &i in idx {
                    let f = forward_cached(arch, theta, d.input(i), ws);
                    let y = d.y[i];
                    let (term, dterm) = match *kind {
                        Likelihood::GaussianRegression => {
                            let r = y - f;
                            (-0.5 * r * r, r)
                        }
                        Likelihood::QuasiGaussian { kappa } => {
                            let r = y - f;
                            (-0.5 * kappa * r * r, kappa * r)
                        }
                        Likelihood::BernoulliClassification { truncation } => {
                            let p = f.clamp(truncation, 1.0 - truncation);
                            let term = if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
                            let slope = if f > truncation && f < 1.0 - truncation {
                                if y == 1.0 {
                                    1.0 / p
                                } else {
                                    -1.0 / (1.0 - p)
                                }
                            } else {
                                0.0
                            };
                            (term, slope)
                        }
                        Likelihood::PoissonProcess { .. } => {
                            unreachable!("checked at construction")
                        }
                    };
                    ll += term;
                    if let Some(g) = grad.as_deref_mut() {
                        if dterm != 0.0 {
                            backward(arch, theta, scale * dterm, ws, g);
                        }
                    }
                }
                ll *= scale;
                if matches!(kind, Likelihood::GaussianRegression) {
                    ll -= 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
                }
                ll
            }
            _ => unreachable!("checked at construction"),
        }
    }
}

fn midpoint_grid(dim: usize, resolution: usize) -> Vec<f64> {
    let total = resolution.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut rem = flat;
        for _ in 0..dim {
            let k = rem % resolution;
            rem /= resolution;
            nodes.push((k as f64 + 0.5) / resolution as f64);
        }
    }
    nodes
}

/// Free-function form of [`LikelihoodAdapter::log_likelihood`].
pub fn log_likelihood(
    adapter: &LikelihoodAdapter,
    arch: &NetArchitecture,
    theta: &[f64],
) -> Result<f64> {
    adapter.log_likelihood(arch, theta)
}

/// Per-coordinate uniform variational distribution on `[-B, B]^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxVariationalState {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bound: f64,
}

impl BoxVariationalState {
    /// Minimum interval width kept by [`project`](Self::project).
    pub fn min_gap(&self) -> f64 {
        1e-6 * self.bound
    }

    /// Centers drawn from `Unif(-0.1, 0.1)` with the given half-width.
    pub fn initial(arch: &NetArchitecture, half_width: f64, rng: &mut impl Rng) -> Self {
        let p = arch.param_count();
        let b = arch.bound;
        let w = half_width;
        let mut lo = Vec::with_capacity(p);
        let mut hi = Vec::with_capacity(p);
        for _ in 0..p {
            let c = rng.random_range(-0.1..0.1);
            lo.push(c - w);
            hi.push(c + w);
        }
        let mut s = Self { lo, hi, bound: b };
        s.project();
        s
    }

    /// A box of half-width `half` around `center`, projected to feasibility.
    pub fn around(center: &[f64], half: f64, bound: f64) -> Self {
        let mut s = Self {
            lo: center.iter().map(|c| c - half).collect(),
            hi: center.iter().map(|c| c + half).collect(),
            bound,
        };
        s.project();
        s
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_feasible(&self) -> bool {
        let b = self.bound;
        let gap = self.min_gap();
        self.lo
            .iter()
            .zip(&self.hi)
            .all(|(&l, &h)| l >= -b && h <= b && h - l >= gap)
    }

    /// Clamps endpoints to `[-B, B]` and enforces `hi - lo >= min_gap`.
    /// Identity on feasible states.
    pub fn project(&mut self) {
        let b = self.bound;
        let gap = self.min_gap();
        for (l, h) in self.lo.iter_mut().zip(self.hi.iter_mut()) {
            *l = l.clamp(-b, b);
            *h = h.clamp(-b, b);
            if *h - *l < gap {
                let c = (0.5 * (*l + *h)).clamp(-b + 0.5 * gap, b - 0.5 * gap);
                *l = c - 0.5 * gap;
                *h = c + 0.5 * gap;
            }
        }
    }

    pub fn kl_to_prior(&self) -> Result<f64> {
        kl_uniform_box(&self.lo, &self.hi, self.bound)
    }

    /// `(d KL / d lo, d KL / d hi) = (1 / w, -1 / w)` with `w = hi - lo`.
    pub fn kl_gradient(&self) -> (Vec<f64>, Vec<f64>) {
        let g: Vec<f64> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 1.0 / (h - l))
            .collect();
        let neg = g.iter().map(|x| -x).collect();
        (g, neg)
    }

    /// `theta = lo + z * (hi - lo)`.
    pub fn reparameterize(&self, z: &[f64], theta: &mut [f64]) {
        for j in 0..self.lo.len() {
            theta[j] = self.lo[j] + z[j] * (self.hi[j] - self.lo[j]);
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| l + rng.random::<f64>() * (h - l))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn mean_width(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .sum::<f64>()
            / self.lo.len() as f64
    }
}

/// Monte Carlo objective `(1/V) sum_v -loglik(theta_v) + KL` for fixed base
/// draws `z_v`, with its gradient with respect to `(lo, hi)`.
#[derive(Debug, Clone)]
pub struct ReparamEstimate {
    pub value: f64,
    pub grad_lo: Vec<f64>,
    pub grad_hi: Vec<f64>,
}

pub fn reparam_objective(
    arch: &NetArchitecture,
    state: &BoxVariationalState,
    adapter: &LikelihoodAdapter,
    draws: &[Vec<f64>],
    batch: Option<&[usize]>,
) -> Result<ReparamEstimate> {
    let p = arch.param_count();
    if state.dim() != p {
        return Err(AvbError::shape("variational state", p, state.dim()));
    }
    if draws.is_empty() {
        return Err(AvbError::Config(
            "need at least one Monte Carlo draw".into(),
        ));
    }
    let mut ws = NetWorkspace::new(arch);
    let mut theta = vec![0.0; p];
    let mut g = vec![0.0; p];
    let mut grad_lo = vec![0.0; p];
    let mut grad_hi = vec![0.0; p];
    let inv_v = 1.0 / draws.len() as f64;
    let mut nll = 0.0;
    for z in draws {
        state.reparameterize(z, &mut theta);
        g.iter_mut().for_each(|x| *x = 0.0);
        let ll = adapter.eval(arch, &theta, batch, &mut ws, Some(&mut g));
        nll -= ll * inv_v;
        // d(-ll)/d lo = -g (1 - z), d(-ll)/d hi = -g z
        for j in 0..p {
            grad_lo[j] -= inv_v * g[j] * (1.0 - z[j]);
            grad_hi[j] -= inv_v * g[j] * z[j];
        }
    }
    let kl = state.kl_to_prior()?;
    let (kl_lo, kl_hi) = state.kl_gradient();
    for j in 0..p {
        grad_lo[j] += kl_lo[j];
        grad_hi[j] += kl_hi[j];
    }
    let value = nll + kl;
    if !value.is_finite() || grad_lo.iter().chain(&grad_hi).any(|x| !x.is_finite()) {
        return Err(AvbError::NonFiniteObjective(format!(
            "reparameterized objective {value} over {} draws (expected nll {nll}, kl {kl})",
            draws.len()
        )));
    }
    Ok(ReparamEstimate {
        value,
        grad_lo,
        grad_hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain projected gradient descent.
    Sgd,
}

/// First-order optimizer state over the concatenated `(lo, hi)` vector.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
    Sgd,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        match kind {
            OptimizerKind::Adam => OptimizerState::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
            OptimizerKind::Sgd => OptimizerState::Sgd,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= lr * mh / (vh.sqrt() + *eps);
                }
            }
        }
    }
}

fn draw_base(p: usize, v: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..v)
        .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// One reparameterized gradient step followed by projection. Returns the
/// objective estimate at the pre-step state.
#[allow(clippy::too_many_arguments)]
pub fn elbo_gradient_step(
    arch: &NetArchitecture,
    state: &mut BoxVariationalState,
    adapter: &LikelihoodAdapter,
    mc_samples: usize,
    optimizer: &mut OptimizerState,
    lr: f64,
    batch: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(AvbError::Config(
            "need at least one Monte Carlo draw".into(),
        ));
    }
    let p = arch.param_count();
    let draws = draw_base(p, mc_samples, rng);
    let est = reparam_objective(arch, state, adapter, &draws, batch)?;
    let mut params: Vec<f64> = state.lo.iter().chain(&state.hi).copied().collect();
    let grad: Vec<f64> = est.grad_lo.iter().chain(&est.grad_hi).copied().collect();
    optimizer.step(&mut params, &grad, lr);
    state.lo.copy_from_slice(&params[..p]);
    state.hi.copy_from_slice(&params[p..]);
    state.project();
    Ok(est.value)
}

/// Training settings for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Monte Carlo draws per gradient step.
    pub mc_samples: usize,
    /// Monte Carlo draws for the reported objective.
    pub eval_samples: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Mini-batch size; `None` is full batch.
    pub batch_size: Option<usize>,
    /// Initial interval half-width; `None` uses `0.05 B`.
    pub init_half_width: Option<f64>,
}

impl FitConfig {
    pub fn half_width_for(&self, arch: &NetArchitecture) -> f64 {
        self.init_half_width.unwrap_or(0.05 * arch.bound)
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            mc_samples: 8,
            eval_samples: 256,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            batch_size: None,
            init_half_width: None,
        }
    }
}

/// A fitted architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepComponent {
    pub arch: NetArchitecture,
    pub state: BoxVariationalState,
}

#[derive(Debug, Clone)]
pub struct DeepFit {
    pub component: DeepComponent,
    pub elbo: ElboBreakdown,
    /// Mean objective estimate per epoch.
    pub trace: Vec<f64>,
}

/// Objective of `state` with `expected_nll` estimated from `samples` draws.
pub fn evaluate_objective(
    arch: &NetArchitecture,
    state: &BoxVariationalState,
    adapter: &LikelihoodAdapter,
    samples: usize,
    seed: u64,
) -> Result<ElboBreakdown> {
    let mut rng = substream(seed, &[]);
    let mut ws = NetWorkspace::new(arch);
    let mut nll = 0.0;
    for _ in 0..samples {
        let theta = state.sample(&mut rng);
        nll -= adapter.eval(arch, &theta, None, &mut ws, None);
    }
    nll /= samples.max(1) as f64;
    let kl = state.kl_to_prior()?;
    if !nll.is_finite() {
        return Err(AvbError::NonFiniteObjective(format!(
            "expected nll {nll} for {}",
            arch.model_id()
        )));
    }
    Ok(ElboBreakdown::monte_carlo(nll, kl, samples as u64, seed))
}

/// Minimizes the variational objective of one architecture.
pub fn fit_model(
    arch: &NetArchitecture,
    adapter: &LikelihoodAdapter,
    config: &FitConfig,
) -> Result<DeepFit> {
    if arch.input_dim != adapter.input_dim() {
        return Err(AvbError::shape(
            "input dimension",
            adapter.input_dim(),
            arch.input_dim,
        ));
    }
    let mut rng: StreamRng = substream(config.seed, &[0]);
    let mut state = BoxVariationalState::initial(arch, config.half_width_for(arch), &mut rng);
    let mut optimizer = OptimizerState::new(config.optimizer, 2 * arch.param_count());
    let n = adapter.batchable_len();
    let batch_size = match config.batch_size {
        Some(b) if b > 0 && b < n => Some(b),
        _ => None,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut acc = 0.0;
        let mut steps = 0usize;
        match batch_size {
            None => {
                acc += elbo_gradient_step(
                    arch,
                    &mut state,
                    adapter,
                    config.mc_samples,
                    &mut optimizer,
                    config.lr,
                    None,
                    &mut rng,
                )?;
                steps += 1;
            }
            Some(b) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(b) {
                    acc += elbo_gradient_step(
                        arch,
                        &mut state,
                        adapter,
                        config.mc_samples,
                        &mut optimizer,
                        config.lr,
                        Some(chunk),
                        &mut rng,
                    )?;
                    steps += 1;
                }
            }
        }
        trace.push(acc / steps as f64);
    }
    let elbo = evaluate_objective(
        arch,
        &state,
        adapter,
        config.eval_samples,
        derive_seed(config.seed, &[1]),
    )?;
    Ok(DeepFit {
        component: DeepComponent { arch: *arch, state },
        elbo,
        trace,
    })
}

/// Prior over architectures: `alpha_(K,M) ∝ exp(-b0 (K M)^2 log n)`,
/// expressed through the complexity `zeta = K M sqrt(log n / n)`.
pub fn architecture_collection(
    grid: &[NetArchitecture],
    n: usize,
    b0: f64,
) -> Result<ModelCollection> {
    let nf = n as f64;
    let entries = grid
        .iter()
        .map(|a| ModelEntry {
            id: a.model_id(),
            complexity: (a.depth * a.width) as f64 * (nf.ln() / nf).sqrt(),
        })
        .collect();
    ModelCollection::from_complexity(entries, b0, 1.0, nf)
}

/// Fits over an architecture grid and their combination.
#[derive(Debug, Clone)]
pub struct GridFit {
    pub collection: ModelCollection,
    pub combined: CombinedPosterior<DeepComponent>,
    /// Architectures whose fit failed; excluded from `combined`.
    pub failures: Vec<(ModelId, String)>,
    pub traces: Vec<Vec<f64>>,
}

/// Fits every architecture in parallel (per-model seeds derived from
/// `config.seed` and the grid position) and combines the results. Models whose
/// fit fails are dropped and the prior renormalized over the rest.
pub fn fit_grid(
    grid: &[NetArchitecture],
    adapter: &LikelihoodAdapter,
    config: &FitConfig,
    b0: f64,
) -> Result<GridFit> {
    let n = match &adapter.data {
        Dataset::Regression(d) => d.len(),
        Dataset::PointProcess(d) => d.len().max(2),
    };
    let collection = architecture_collection(grid, n, b0)?;
    let results: Vec<Result<DeepFit>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, arch)| {
            let cfg = FitConfig {
                seed: derive_seed(config.seed, &[i as u64]),
                ..config.clone()
            };
            fit_model(arch, adapter, &cfg)
        })
        .collect();
    let mut keep = Vec::new();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                keep.push(i);
                traces.push(f.trace);
                fits.push((grid[i].model_id(), f.component, f.elbo));
            }
            Err(e) => {
                log::warn!("excluding {}: {e}", grid[i].model_id());
                failures.push((grid[i].model_id(), e.to_string()));
            }
        }
    }
    if keep.is_empty() {
        return Err(AvbError::NonFiniteObjective(
            "every architecture failed to fit".into(),
        ));
    }
    let collection = if failures.is_empty() {
        collection
    } else {
        collection.restrict(&keep)?
    };
    let combined = combine_posteriors(&collection, fits)?;
    Ok(GridFit {
        collection,
        combined,
        failures,
        traces,
    })
}

/// Posterior-mean predictions with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Draws `(model, theta)` pairs from the combined posterior and averages the
/// network outputs at every input. The same draws are used for all inputs.
pub fn posterior_predictive_summary(
    combined: &CombinedPosterior<DeepComponent>,
    inputs: &[Vec<f64>],
    draws: usize,
    rng: &mut impl Rng,
) -> Result<PredictiveSummary> {
    let picker = WeightedIndex::new(&combined.gamma)
        .map_err(|e| AvbError::Config(format!("invalid model weights: {e}")))?;
    let mut sum = vec![0.0; inputs.len()];
    let mut sum_sq = vec![0.0; inputs.len()];
    let mut workspaces: Vec<Option<NetWorkspace>> = vec![None; combined.len()];
    for _ in 0..draws {
        let m = picker.sample(rng);
        let comp = &combined.components[m];
        let theta = comp.state.sample(rng);
        let ws = workspaces[m].get_or_insert_with(|| NetWorkspace::new(&comp.arch));
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != comp.arch.input_dim {
                return Err(AvbError::shape(
                    "prediction input",
                    comp.arch.input_dim,
                    x.len(),
                ));
            }
            let f = forward_cached(&comp.arch, &theta, x, ws);
            sum[i] += f;
            sum_sq[i] += f * f;
        }
    }
    let d = draws.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / d).collect();
    let std_error = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s2, m)| {
            let var = if draws > 1 {
                ((s2 / d - m * m) * d / (d - 1.0)).max(0.0)
            } else {
                0.0
            };
            (var / d).sqrt()
        })
        .collect();
    Ok(PredictiveSummary { mean, std_error })
}

/// Posterior-mean network predictions from `draws` posterior samples.
pub fn posterior_mean_predict(
    combined: &CombinedPosterior<DeepComponent>,
    inputs: &[Vec<f64>],
    draws: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    Ok(posterior_predictive_summary(combined, inputs, draws, rng)?.mean)
}
