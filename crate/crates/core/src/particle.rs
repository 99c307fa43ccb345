//! Particle variational families over discretized parameter spaces.
//!
//! A model's parameter space is replaced by a finite net of atoms carrying a
//! uniform prior. The variational family is a mixture of `Q` Dirac masses at
//! distinct atoms. Training alternates a projected gradient step on the
//! centers, a tie-break that keeps the centers distinct, and a closed-form
//! weight update. With `Q = N` the weight update reproduces the discretized
//! posterior exactly; with `Q = 1` the fit is the likelihood maximizer.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deep::{LikelihoodAdapter, NetArchitecture, NetWorkspace};
use crate::error::{AvbError, Result};
use crate::vb::{normalize_log_weights, ElboBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AtomSet {
    /// Integer multiples `k s` of the spacing for `|k| <= ceil(B / s)`, with
    /// the outermost values clamped to `[-B, B]`, in every coordinate.
    Grid {
        spacing: f64,
        bound: f64,
        dim: usize,
        half_count: u64,
    },
    Explicit(Vec<Vec<f64>>),
}

/// A finite set of atoms addressed by `u64` index. Grid atoms are never
/// materialized; an index is the mixed-radix encoding of the per-axis
/// offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSpace {
    atoms: AtomSet,
    count: u64,
}

impl DiscretizedSpace {
    pub fn grid(dim: usize, bound: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) || !(bound > 0.0 && bound.is_finite()) {
            return Err(AvbError::Config(format!(
                "grid needs positive finite spacing and bound (got s = {spacing}, B = {bound})"
            )));
        }
        if dim == 0 {
            return Err(AvbError::Config("grid dimension must be positive".into()));
        }
        // tolerate B / s landing a hair above an integer
        let half = ((bound / spacing) * (1.0 - 1e-12)).ceil();
        if half >= u64::MAX as f64 / 2.0 {
            return Err(AvbError::Capacity(format!("{half} atoms per axis")));
        }
        let half_count = half as u64;
        let per_axis = 2 * half_count + 1;
        let mut count: u64 = 1;
        for _ in 0..dim {
            count = count.checked_mul(per_axis).ok_or_else(|| {
                AvbError::Capacity(format!(
                    "{per_axis}^{dim} atoms exceed the addressable range; coarsen the grid"
                ))
            })?;
        }
        Ok(Self {
            atoms: AtomSet::Grid {
                spacing,
                bound,
                dim,
                half_count,
            },
            count,
        })
    }

    /// A net for a network's parameter box fine enough that every parameter
    /// vector has an atom whose network output is within `zeta` in sup norm.
    pub fn for_network(arch: &NetArchitecture, zeta: f64) -> Result<Self> {
        let spacing = 2.0 * zeta / arch.lipschitz_constant();
        Self::grid(arch.param_count(), arch.bound, spacing)
    }

    pub fn explicit(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(AvbError::Config("explicit atom list is empty".into()));
        };
        let dim = first.len();
        let mut seen = std::collections::HashSet::new();
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != dim {
                return Err(AvbError::shape("atom", dim, a.len()));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(AvbError::Config(format!("atom {i} is not finite")));
            }
            let key: Vec<u64> = a.iter().map(|x| x.to_bits()).collect();
            if !seen.insert(key) {
                return Err(AvbError::Config(format!("atom {i} is a duplicate")));
            }
        }
        let count = atoms.len() as u64;
        Ok(Self {
            atoms: AtomSet::Explicit(atoms),
            count,
        })
    }

    pub fn atom_count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        match &self.atoms {
            AtomSet::Grid { dim, .. } => *dim,
            AtomSet::Explicit(a) => a[0].len(),
        }
    }

    pub fn atoms(&self) -> &AtomSet {
        &self.atoms
    }

    /// Coordinates of atom `index`.
    pub fn atom(&self, index: u64) -> Vec<f64> {
        match &self.atoms {
            AtomSet::Grid {
                spacing,
                bound,
                dim,
                half_count,
            } => {
                let per_axis = 2 * half_count + 1;
                let mut rest = index;
                (0..*dim)
                    .map(|_| {
                        let digit = rest % per_axis;
                        rest /= per_axis;
                        let k = digit as f64 - *half_count as f64;
                        (k * spacing).clamp(-bound, *bound)
                    })
                    .collect()
            }
            AtomSet::Explicit(a) => a[index as usize].clone(),
        }
    }

    /// Index of the atom nearest to `point`. On a grid each coordinate is
    /// rounded to the nearest multiple of the spacing (midpoints round up)
    /// and clamped; for explicit atoms the Euclidean nearest wins, lowest
    /// index on ties.
    pub fn project(&self, point: &[f64]) -> Result<u64> {
        if point.len() != self.dim() {
            return Err(AvbError::shape("point", self.dim(), point.len()));
        }
        match &self.atoms {
            AtomSet::Grid {
                spacing,
                half_count,
                ..
            } => {
                let h = *half_count as f64;
                let per_axis = 2 * half_count + 1;
                let mut index = 0u64;
                for &x in point.iter().rev() {
                    let k = if x.is_nan() {
                        0.0
                    } else {
                        (x / spacing + 0.5).floor().clamp(-h, h)
                    };
                    index = index * per_axis + (k + h) as u64;
                }
                Ok(index)
            }
            AtomSet::Explicit(atoms) => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, a) in atoms.iter().enumerate() {
                    let d: f64 = a.iter().zip(point).map(|(u, v)| (u - v) * (u - v)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok(best as u64)
            }
        }
    }

    /// Log prior mass of a single atom under the uniform prior, `-log N`.
    pub fn log_atom_mass(&self) -> f64 {
        -(self.count as f64).ln()
    }
}

/// A Dirac mixture `sum_q w_q delta(psi_q)` over distinct atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub centers: Vec<u64>,
    pub weights: Vec<f64>,
}

impl ParticleState {
    pub fn new(space: &DiscretizedSpace, centers: Vec<u64>, weights: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(AvbError::Config(
                "a particle state needs at least one center".into(),
            ));
        }
        if centers.len() != weights.len() {
            return Err(AvbError::shape(
                "particle weights",
                centers.len(),
                weights.len(),
            ));
        }
        if let Some(&c) = centers.iter().find(|&&c| c >= space.atom_count()) {
            return Err(AvbError::Config(format!("center {c} is not an atom")));
        }
        let distinct: BTreeSet<u64> = centers.iter().copied().collect();
        if distinct.len() != centers.len() {
            return Err(AvbError::Config("particle centers must be distinct".into()));
        }
        let s: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(AvbError::Config(
                "particle weights must form a probability vector".into(),
            ));
        }
        Ok(Self { centers, weights })
    }

    /// Every atom, uniformly weighted (`Q = N`).
    pub fn all_atoms(space: &DiscretizedSpace) -> Result<Self> {
        let n = space.atom_count();
        if n > 1 << 26 {
            return Err(AvbError::Capacity(format!("{n} particles")));
        }
        Ok(Self {
            centers: (0..n).collect(),
            weights: vec![1.0 / n as f64; n as usize],
        })
    }

    /// `q` distinct atoms drawn from `proposal`, uniformly weighted.
    pub fn random(
        space: &DiscretizedSpace,
        q: usize,
        proposal: &mut impl Proposal,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if q == 0 {
            return Err(AvbError::Config(
                "a particle state needs at least one center".into(),
            ));
        }
        let mut occupied = BTreeSet::new();
        let mut centers = Vec::with_capacity(q);
        for _ in 0..q {
            let c = proposal.propose(space, &occupied, rng)?;
            occupied.insert(c);
            centers.push(c);
        }
        Ok(Self {
            centers,
            weights: vec![1.0 / q as f64; q],
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Objective `sum_q w_q (-loglik_q + log(w_q N))` split into its expected
/// negative log-likelihood and KL parts. Zero-weight particles contribute
/// nothing.
pub fn particle_objective(
    space: &DiscretizedSpace,
    state: &ParticleState,
    logliks: &[f64],
) -> Result<ElboBreakdown> {
    if logliks.len() != state.len() {
        return Err(AvbError::shape(
            "log-likelihoods",
            state.len(),
            logliks.len(),
        ));
    }
    let log_n = (space.atom_count() as f64).ln();
    let mut nll = 0.0;
    let mut kl = 0.0;
    for (&w, &l) in state.weights.iter().zip(logliks) {
        if w > 0.0 {
            nll -= w * l;
            kl += w * (w.ln() + log_n);
        }
    }
    Ok(ElboBreakdown::exact(nll, kl))
}

/// `w_q ∝ exp(loglik_q)`, the minimizer of the objective for fixed centers.
pub fn weight_update(logliks: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = logliks.iter().position(|l| !l.is_finite()) {
        return Err(AvbError::NonFiniteObjective(format!(
            "log-likelihood at particle {i}"
        )));
    }
    Ok(normalize_log_weights(logliks).1)
}

/// Sampler over the atoms not yet occupied by a center.
pub trait Proposal {
    fn propose(
        &mut self,
        space: &DiscretizedSpace,
        occupied: &BTreeSet<u64>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<u64>;
}

/// Uniform over unoccupied atoms, by index arithmetic on the sorted occupied
/// set.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformUnoccupied;

impl Proposal for UniformUnoccupied {
    fn propose(
        &mut self,
        space: &DiscretizedSpace,
        occupied: &BTreeSet<u64>,
        rng: &mut dyn rand::RngCore,
    ) -> Result<u64> {
        let free = space.atom_count() - occupied.len() as u64;
        if free == 0 {
            return Err(AvbError::Capacity(format!(
                "all {} atoms are occupied",
                space.atom_count()
            )));
        }
        let mut r = rng.random_range(0..free);
        for &o in occupied {
            if o <= r {
                r += 1;
            } else {
                break;
            }
        }
        Ok(r)
    }
}

/// Resolves coincident centers: within each group the center with the
/// largest weight stays (lowest index among equal weights) and the others
/// are replaced by fresh atoms from `proposal`.
pub fn tie_break(
    space: &DiscretizedSpace,
    proposed: &[u64],
    weights: &[f64],
    rng: &mut impl Rng,
    proposal: &mut impl Proposal,
) -> Result<Vec<u64>> {
    if proposed.len() != weights.len() {
        return Err(AvbError::shape(
            "particle weights",
            proposed.len(),
            weights.len(),
        ));
    }
    if proposed.len() as u64 > space.atom_count() {
        return Err(AvbError::Capacity(format!(
            "{} particles on {} atoms",
            proposed.len(),
            space.atom_count()
        )));
    }
    let mut keeper: HashMap<u64, usize> = HashMap::new();
    for (q, &c) in proposed.iter().enumerate() {
        keeper
            .entry(c)
            .and_modify(|k| {
                if weights[q] > weights[*k] {
                    *k = q;
                }
            })
            .or_insert(q);
    }
    let mut occupied: BTreeSet<u64> = keeper.keys().copied().collect();
    let mut out = proposed.to_vec();
    for (q, c) in out.iter_mut().enumerate() {
        if keeper[c] != q {
            let fresh = proposal.propose(space, &occupied, rng)?;
            occupied.insert(fresh);
            *c = fresh;
        }
    }
    Ok(out)
}

/// A log-likelihood over continuous parameters with its gradient.
pub trait ParticleModel {
    fn log_lik(&self, theta: &[f64]) -> f64;
    /// Writes the gradient of the log-likelihood into `grad`.
    fn grad_log_lik(&self, theta: &[f64], grad: &mut [f64]);
}

/// Step sizes `r_t` for `t = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rate", rename_all = "snake_case")]
pub enum LearningRate {
    Constant(f64),
    /// `r_0 / sqrt(t)`.
    InvSqrt(f64),
}

impl LearningRate {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            LearningRate::Constant(r) => r,
            LearningRate::InvSqrt(r0) => r0 / (t.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleRun {
    pub state: ParticleState,
    pub elbo: ElboBreakdown,
    /// Objective of the initial state and after each iteration.
    pub trace: Vec<f64>,
}

/// Runs `iterations` rounds of: gradient step on `-loglik` at each center,
/// projection onto the net, tie-break, weight update.
pub fn run_algorithm2<M: ParticleModel + ?Sized>(
    space: &DiscretizedSpace,
    model: &M,
    init: ParticleState,
    iterations: usize,
    rate: LearningRate,
    rng: &mut impl Rng,
    proposal: &mut impl Proposal,
) -> Result<ParticleRun> {
    let p = space.dim();
    let mut state = ParticleState::new(space, init.centers, init.weights)?;
    let mut logliks: Vec<f64> = state
        .centers
        .iter()
        .map(|&c| model.log_lik(&space.atom(c)))
        .collect();
    let mut trace = vec![particle_objective(space, &state, &logliks)?.total];
    let mut grad = vec![0.0; p];
    for t in 1..=iterations {
        let r = rate.at(t);
        let moved: Vec<u64> = if r == 0.0 {
            state.centers.clone()
        } else {
            state
                .centers
                .iter()
                .map(|&c| {
                    let mut theta = space.atom(c);
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    model.grad_log_lik(&theta, &mut grad);
                    for (x, g) in theta.iter_mut().zip(&grad) {
                        *x += r * g;
                    }
                    space.project(&theta)
                })
                .collect::<Result<_>>()?
        };
        state.centers = tie_break(space, &moved, &state.weights, rng, proposal)?;
        logliks = state
            .centers
            .iter()
            .map(|&c| model.log_lik(&space.atom(c)))
            .collect();
        state.weights = weight_update(&logliks).map_err(|e| AvbError::NumericalBreakdown {
            iteration: t,
            reason: e.to_string(),
        })?;
        trace.push(particle_objective(space, &state, &logliks)?.total);
    }
    let elbo = particle_objective(space, &state, &logliks)?;
    Ok(ParticleRun { state, elbo, trace })
}

/// The exact discretized posterior over every atom, `∝ exp(loglik)`.
pub fn exact_discrete_posterior<M: ParticleModel + ?Sized>(
    space: &DiscretizedSpace,
    model: &M,
) -> Result<Vec<f64>> {
    let logliks: Vec<f64> = (0..space.atom_count())
        .map(|i| model.log_lik(&space.atom(i)))
        .collect();
    weight_update(&logliks)
}

/// A network likelihood viewed as a particle model.
pub struct NetworkModel<'a> {
    pub arch: NetArchitecture,
    pub adapter: &'a LikelihoodAdapter,
}

impl ParticleModel for NetworkModel<'_> {
    fn log_lik(&self, theta: &[f64]) -> f64 {
        let mut ws = NetWorkspace::new(&self.arch);
        self.adapter.eval(&self.arch, theta, None, &mut ws, None)
    }

    fn grad_log_lik(&self, theta: &[f64], grad: &mut [f64]) {
        let mut ws = NetWorkspace::new(&self.arch);
        self.adapter
            .eval(&self.arch, theta, None, &mut ws, Some(grad));
    }
}

/// A model given as closures, convenient for small examples and tests.
pub struct FnModel<L, G> {
    pub log_lik: L,
    pub grad: G,
}

impl<L, G> ParticleModel for FnModel<L, G>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn log_lik(&self, theta: &[f64]) -> f64 {
        (self.log_lik)(theta)
    }

    fn grad_log_lik(&self, theta: &[f64], grad: &mut [f64]) {
        (self.grad)(theta, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn quadratic(
        center: f64,
        a: f64,
    ) -> FnModel<impl Fn(&[f64]) -> f64, impl Fn(&[f64], &mut [f64])> {
        FnModel {
            log_lik: move |t: &[f64]| -a * t.iter().map(|x| (x - center).powi(2)).sum::<f64>(),
            grad: move |t: &[f64], g: &mut [f64]| {
                for (gi, x) in g.iter_mut().zip(t) {
                    *gi = -2.0 * a * (x - center);
                }
            },
        }
    }

    #[test]
    fn grid_counts_and_atoms() {
        let s = DiscretizedSpace::grid(1, 1.0, 0.5).unwrap();
        assert_eq!(s.atom_count(), 5);
        let atoms: Vec<f64> = (0..5).map(|i| s.atom(i)[0]).collect();
        assert_eq!(atoms, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(DiscretizedSpace::grid(2, 1.0, 1.0).unwrap().atom_count(), 9);
        assert_eq!(
            DiscretizedSpace::grid(3, 2.0, 0.25).unwrap().atom_count(),
            4913
        );
        let ragged = DiscretizedSpace::grid(1, 1.0, 0.3).unwrap();
        let atoms: Vec<f64> = (0..ragged.atom_count())
            .map(|i| ragged.atom(i)[0])
            .collect();
        assert_eq!(atoms.first(), Some(&-1.0));
        assert_eq!(atoms.last(), Some(&1.0));
        assert_eq!(atoms.len(), 9);
    }

    #[test]
    fn huge_grids_are_rejected() {
        let e = DiscretizedSpace::grid(100, 16.0, 0.01).unwrap_err();
        assert!(matches!(e, AvbError::Capacity(_)));
    }

    #[test]
    fn projection_rounds_and_clamps() {
        let s = DiscretizedSpace::grid(1, 1.0, 0.5).unwrap();
        assert_eq!(s.atom(s.project(&[0.26]).unwrap()), vec![0.5]);
        assert_eq!(s.atom(s.project(&[0.25]).unwrap()), vec![0.5]);
        assert_eq!(s.atom(s.project(&[-0.25]).unwrap()), vec![0.0]);
        assert_eq!(s.atom(s.project(&[10.0]).unwrap()), vec![1.0]);
        let g = DiscretizedSpace::grid(3, 2.0, 0.25).unwrap();
        for i in (0..g.atom_count()).step_by(37) {
            assert_eq!(g.project(&g.atom(i)).unwrap(), i);
        }
    }

    #[test]
    fn objective_examples() {
        let s = DiscretizedSpace::grid(1, 1.5, 1.0).unwrap();
        assert_eq!(s.atom_count(), 5);
        let one = ParticleState::new(&s, vec![2], vec![1.0]).unwrap();
        let e = particle_objective(&s, &one, &[-0.7]).unwrap();
        assert!((e.total - (0.7 + 5f64.ln())).abs() < 1e-12);

        let all = ParticleState::all_atoms(&s).unwrap();
        let e = particle_objective(&s, &all, &[3.0; 5]).unwrap();
        assert!((e.total + 3.0).abs() < 1e-12);

        let four =
            DiscretizedSpace::explicit(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let two = ParticleState::new(&four, vec![0, 3], vec![0.5, 0.5]).unwrap();
        let e = particle_objective(&four, &two, &[0.0, 0.0]).unwrap();
        assert!((e.total - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weight_update_examples() {
        assert_eq!(weight_update(&[2.0, 2.0, 2.0]).unwrap(), vec![1.0 / 3.0; 3]);
        let w = weight_update(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn tie_break_rules() {
        let s = DiscretizedSpace::grid(1, 2.0, 1.0).unwrap();
        let mut rng = substream(1, &[]);
        let out = tie_break(
            &s,
            &[0, 3, 4],
            &[0.2, 0.3, 0.5],
            &mut rng,
            &mut UniformUnoccupied,
        )
        .unwrap();
        assert_eq!(out, vec![0, 3, 4]);
        let out = tie_break(&s, &[2, 2], &[0.4, 0.6], &mut rng, &mut UniformUnoccupied).unwrap();
        assert_eq!(out[1], 2);
        assert_ne!(out[0], 2);
        let out = tie_break(&s, &[2, 2], &[0.5, 0.5], &mut rng, &mut UniformUnoccupied).unwrap();
        assert_eq!(out[0], 2);
        let e = tie_break(
            &s,
            &[1; 6],
            &[1.0 / 6.0; 6],
            &mut rng,
            &mut UniformUnoccupied,
        )
        .unwrap_err();
        assert!(matches!(e, AvbError::Capacity(_)));
    }

    #[test]
    fn uniform_proposal_skips_occupied() {
        let s = DiscretizedSpace::grid(1, 2.0, 1.0).unwrap();
        let occupied: BTreeSet<u64> = [0, 1, 3].into_iter().collect();
        let mut rng = substream(2, &[]);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            seen.insert(UniformUnoccupied.propose(&s, &occupied, &mut rng).unwrap());
        }
        assert_eq!(seen, [2, 4].into_iter().collect());
    }

    #[test]
    fn full_particle_set_is_the_exact_posterior() {
        let s = DiscretizedSpace::grid(2, 1.0, 0.25).unwrap();
        let model = quadratic(0.3, 4.0);
        let mut rng = substream(3, &[]);
        let run = run_algorithm2(
            &s,
            &model,
            ParticleState::all_atoms(&s).unwrap(),
            1,
            LearningRate::Constant(0.0),
            &mut rng,
            &mut UniformUnoccupied,
        )
        .unwrap();
        let exact = exact_discrete_posterior(&s, &model).unwrap();
        let tv: f64 = run
            .state
            .weights
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 1e-12);
        // objective equals minus the log evidence under the uniform atom prior
        let ll: Vec<f64> = (0..s.atom_count())
            .map(|i| model.log_lik(&s.atom(i)))
            .collect();
        let log_evidence = crate::vb::log_sum_exp(&ll) + s.log_atom_mass();
        assert!((run.elbo.total + log_evidence).abs() < 1e-10);
    }

    #[test]
    fn single_particle_finds_the_argmax() {
        let s = DiscretizedSpace::grid(1, 3.0, 0.1).unwrap();
        let model = quadratic(1.234, 2.0);
        let mut rng = substream(4, &[]);
        let init = ParticleState::new(&s, vec![0], vec![1.0]).unwrap();
        let run = run_algorithm2(
            &s,
            &model,
            init,
            50,
            LearningRate::InvSqrt(0.2),
            &mut rng,
            &mut UniformUnoccupied,
        )
        .unwrap();
        let best = (0..s.atom_count())
            .max_by(|&a, &b| {
                model
                    .log_lik(&s.atom(a))
                    .total_cmp(&model.log_lik(&s.atom(b)))
            })
            .unwrap();
        assert_eq!(run.state.centers, vec![best]);
        assert_eq!(run.state.weights, vec![1.0]);
    }

    #[test]
    fn zero_rate_keeps_centers_and_never_increases() {
        let s = DiscretizedSpace::grid(2, 2.0, 0.5).unwrap();
        let model = quadratic(-0.4, 1.0);
        let mut rng = substream(5, &[]);
        let init = ParticleState::random(&s, 7, &mut UniformUnoccupied, &mut rng).unwrap();
        let centers = init.centers.clone();
        let run = run_algorithm2(
            &s,
            &model,
            init,
            5,
            LearningRate::Constant(0.0),
            &mut rng,
            &mut UniformUnoccupied,
        )
        .unwrap();
        assert_eq!(run.state.centers, centers);
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }
}
