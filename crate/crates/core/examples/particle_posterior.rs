//! Dirac-mixture variational posterior on a grid, against the exact
//! discretized posterior.

use avb::particle::{
    exact_discrete_posterior, run_algorithm2, DiscretizedSpace, FnModel, LearningRate, ParticleState,
    UniformUnoccupied,
};
use avb::rng::substream;

fn main() -> avb::Result<()> {
    // log-likelihood of a 2-d Gaussian location model with 30 observations
    let center = [0.6, -0.3];
    let n = 30.0;
    let model = FnModel {
        log_lik: |t: &[f64]| -0.5 * n * t.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>(),
        grad: |t: &[f64], g: &mut [f64]| {
            for ((g, a), c) in g.iter_mut().zip(t).zip(center) {
                *g = -n * (a - c);
            }
        },
    };
    let space = DiscretizedSpace::grid(2, 1.0, 0.1)?;
    let exact = exact_discrete_posterior(&space, &model)?;

    let mut rng = substream(3, &[]);
    for q in [1, 4, 16, 64] {
        let init = ParticleState::random(&space, q, &mut UniformUnoccupied, &mut rng)?;
        let run = run_algorithm2(&space, &model, init, 50, LearningRate::InvSqrt(1.0 / n), &mut rng, &mut UniformUnoccupied)?;
        let mut tv = 1.0;
        for (&c, &w) in run.state.centers.iter().zip(&run.state.weights) {
            let p = exact[c as usize];
            tv += (w - p).abs() - p;
        }
        let heaviest = run
            .state
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| space.atom(run.state.centers[i]))
            .unwrap_or_default();
        println!(
            "Q = {q:>2}: objective {:>7.3}, TV to exact {:.3}, heaviest atom ({:+.1}, {:+.1})",
            run.elbo.total,
            tv / 2.0,
            heaviest[0],
            heaviest[1]
        );
    }
    println!("{} atoms in the space", space.atom_count());
    Ok(())
}
