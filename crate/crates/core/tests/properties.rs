use std::collections::BTreeSet;

use proptest::prelude::*;

use avb::compare::select_model;
use avb::experiment::Standardization;
use avb::particle::{tie_break, DiscretizedSpace, UniformUnoccupied};
use avb::rng::substream;
use avb::vb::{change_of_measure_check, posterior_model_weights};
use avb::{combine_posteriors, ElboBreakdown, ModelCollection, ModelEntry, ModelId};

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn positive_weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, len).prop_map(simplex)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn change_of_measure_holds(
        (xi1, xi2, g) in (2usize..12).prop_flat_map(|k| (
            prop::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1.0], k),
            positive_weights(k),
            prop::collection::vec(-30.0f64..30.0, k),
        )).prop_filter("xi1 needs mass", |(a, _, _)| a.iter().sum::<f64>() > 0.0)
    ) {
        let xi1 = simplex(xi1);
        let check = change_of_measure_check(&xi1, &xi2, &g).unwrap();
        prop_assert!(check.holds, "lhs {} rhs {}", check.lhs, check.rhs);
    }
}

proptest! {
    #[test]
    fn tie_break_leaves_distinct_centers(
        dim in 1usize..3,
        half in 1u32..4,
        raw in prop::collection::vec((0u64..1000, 0.0f64..1.0), 1..9),
        seed in any::<u64>(),
    ) {
        let space = DiscretizedSpace::grid(dim, half as f64, 1.0).unwrap();
        let n = space.atom_count();
        let raw: Vec<_> = raw.into_iter().take(n as usize).collect();
        let proposed: Vec<u64> = raw.iter().map(|(c, _)| c % n).collect();
        let weights: Vec<f64> = raw.iter().map(|(_, w)| *w).collect();
        let mut rng = substream(seed, &[]);
        let out = tie_break(&space, &proposed, &weights, &mut rng, &mut UniformUnoccupied).unwrap();
        let distinct: BTreeSet<u64> = out.iter().copied().collect();
        prop_assert_eq!(distinct.len(), out.len());
        prop_assert!(out.iter().all(|&c| c < n));
        // every original location survives
        let before: BTreeSet<u64> = proposed.iter().copied().collect();
        prop_assert!(before.is_subset(&distinct));
    }

    #[test]
    fn projection_is_idempotent(
        dim in 1usize..4,
        spacing in prop_oneof![Just(0.25), Just(0.5), Just(1.0)],
        point in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let space = DiscretizedSpace::grid(dim, 2.0, spacing).unwrap();
        let a = space.project(&point[..dim]).unwrap();
        let atom = space.atom(a);
        prop_assert_eq!(space.project(&atom).unwrap(), a);
        prop_assert!(atom.iter().all(|v| v.abs() <= 2.0 + 1e-12));
    }

    #[test]
    fn selection_ignores_a_common_shift(
        totals in prop::collection::vec(-100.0f64..100.0, 2..8),
        shift in -1e3f64..1e3,
    ) {
        let entries: Vec<ModelEntry> = (0..totals.len())
            .map(|m| ModelEntry { id: ModelId::new(format!("m{m}")), complexity: m as f64 })
            .collect();
        let collection = ModelCollection::from_complexity(entries, 0.3, 1.0, 1.0).unwrap();
        let build = |s: f64| {
            let fits: Vec<_> = totals
                .iter()
                .enumerate()
                .map(|(m, t)| (ModelId::new(format!("m{m}")), (), ElboBreakdown::exact(t + s, 0.0)))
                .collect();
            combine_posteriors(&collection, fits).unwrap()
        };
        let a = build(0.0);
        let b = build(shift);
        prop_assert_eq!(
            select_model(&a, &collection).unwrap().selected,
            select_model(&b, &collection).unwrap().selected
        );
        for (x, y) in a.gamma.iter().zip(&b.gamma) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn model_weights_normalize(
        pairs in prop::collection::vec((-50.0f64..0.0, -1e6f64..1e6), 1..20),
    ) {
        let (la, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (log_gamma, gamma) = posterior_model_weights(&la, &e);
        let s: f64 = gamma.iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
        prop_assert!(log_gamma.iter().all(|l| *l <= 1e-15 && !l.is_nan()));
    }

    #[test]
    fn standardization_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30),
    ) {
        let st = Standardization::fit(vec!["a".into(), "b".into(), "c".into()], &rows);
        for r in &rows {
            let back = st.inverse(&st.transform(r));
            for (x, y) in r.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }
}
