use std::sync::OnceLock;

use anosov_lab::basin::{basin_curves, SampleGrid};
use anosov_lab::lyapunov::{log_unstable_jacobian, unstable_integral, DEFAULT_WARMUP};
use anosov_lab::markov::{
    cat_map_partition, itinerary, CylinderSamples, CylinderSource, MarkovPartition,
};
use anosov_lab::torus::{HyperbolicToralMap, PerturbationTerm, TorusPoint};
use anosov_lab::weak_star::{
    discrete_moments, invariance_defect, moments, DiscreteMeasure, MeasureRep, TestFunctionFamily,
};
use proptest::prelude::*;

fn family() -> &'static TestFunctionFamily {
    static F: OnceLock<TestFunctionFamily> = OnceLock::new();
    F.get_or_init(|| TestFunctionFamily::new(33).unwrap())
}

fn partition() -> &'static MarkovPartition {
    static P: OnceLock<MarkovPartition> = OnceLock::new();
    P.get_or_init(|| cat_map_partition().unwrap())
}

fn perturbed(eps: f64) -> HyperbolicToralMap {
    HyperbolicToralMap::new(
        [[2, 1], [1, 1]],
        eps,
        vec![PerturbationTerm::new([1.0, 0.0], [0, 1])],
    )
    .unwrap()
}

fn point() -> impl Strategy<Value = TorusPoint> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b)| TorusPoint::new(a, b))
}

fn measure() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((point(), 0.01..1.0f64), 1..6).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        DiscreteMeasure::new(
            atoms.iter().map(|a| a.0).collect(),
            atoms.iter().map(|a| a.1 / total).collect(),
        )
        .unwrap()
    })
}

fn dist(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    discrete_moments(a, family())
        .distance(&discrete_moments(b, family()))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_axioms(a in measure(), b in measure(), c in measure()) {
        prop_assert!(dist(&a, &a) <= 1e-12);
        prop_assert!((dist(&a, &b) - dist(&b, &a)).abs() <= 1e-12);
        prop_assert!(dist(&a, &c) <= dist(&a, &b) + dist(&b, &c) + 1e-12);
        prop_assert!(dist(&a, &b) <= 2.0);
    }

    #[test]
    fn balls_are_convex(centre in measure(), a in measure(), b in measure(), t in 0.0..=1.0f64) {
        let r = dist(&a, &centre).max(dist(&b, &centre));
        let mix = DiscreteMeasure::mix(t, &a, &b).unwrap();
        prop_assert!(dist(&mix, &centre) <= r + 1e-12);
    }

    #[test]
    fn truncation_error_is_bounded_by_tail(a in measure(), b in measure(), k in 2usize..40, extra in 1usize..40) {
        let small = TestFunctionFamily::new(k).unwrap();
        let large = TestFunctionFamily::new(k + extra).unwrap();
        let ds = discrete_moments(&a, &small).distance(&discrete_moments(&b, &small)).unwrap();
        let dl = discrete_moments(&a, &large).distance(&discrete_moments(&b, &large)).unwrap();
        prop_assert!(dl >= ds - 1e-15);
        prop_assert!(dl - ds <= small.tail_bound() + 1e-15);
    }

    #[test]
    fn moments_are_affine(a in measure(), b in measure(), t in 0.0..=1.0f64) {
        let mix = MeasureRep::Mixture(vec![(t, MeasureRep::Discrete(a.clone())), (1.0 - t, MeasureRep::Discrete(b.clone()))]);
        let direct = discrete_moments(&DiscreteMeasure::mix(t, &a, &b).unwrap(), family());
        prop_assert!(moments(&mix, family()).distance(&direct).unwrap() <= 1e-12);
    }

    #[test]
    fn invariance_defect_is_at_most_two_over_n(p in point(), n in 1usize..300) {
        let d = invariance_defect(&HyperbolicToralMap::cat_map(), p, n, family()).unwrap();
        prop_assert!(d <= 2.0 / n as f64 + 1e-12);
    }

    #[test]
    fn inverse_undoes_step(p in point(), eps in 0.0..0.02f64) {
        let map = perturbed(eps);
        let back = map.step_inverse(map.step(p)).unwrap();
        prop_assert!(back.distance(&p) < 1e-10);
    }

    #[test]
    fn psi_is_additive_along_orbits(p in point(), n in 1usize..15) {
        let map = perturbed(0.005);
        let direct: f64 = map.iter_from(p).take(n).map(|x| log_unstable_jacobian(&map, x, DEFAULT_WARMUP).unwrap()).sum();
        let birkhoff = anosov_lab::lyapunov::birkhoff_unstable_average(&map, p, n, DEFAULT_WARMUP).unwrap() * n as f64;
        prop_assert!((direct - birkhoff).abs() < 1e-8);
    }

    #[test]
    fn unstable_integral_is_affine(a in measure(), b in measure(), t in 0.0..=1.0f64) {
        let map = perturbed(0.005);
        let ia = unstable_integral(&map, &MeasureRep::Discrete(a.clone()), DEFAULT_WARMUP, 1).unwrap();
        let ib = unstable_integral(&map, &MeasureRep::Discrete(b.clone()), DEFAULT_WARMUP, 1).unwrap();
        let mix = MeasureRep::Mixture(vec![(t, MeasureRep::Discrete(a)), (1.0 - t, MeasureRep::Discrete(b))]);
        let im = unstable_integral(&map, &mix, DEFAULT_WARMUP, 1).unwrap();
        prop_assert!((im - (t * ia + (1.0 - t) * ib)).abs() < 1e-12);
    }

    #[test]
    fn itineraries_shift(p in point(), n in 2usize..20) {
        let cat = HyperbolicToralMap::cat_map();
        let long = itinerary(&cat, partition(), p, n).unwrap();
        let tail = itinerary(&cat, partition(), cat.step(p), n - 1).unwrap();
        prop_assert_eq!(&long.symbols[1..], &tail.symbols[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn basin_hits_are_monotone_in_epsilon(
        target in measure(),
        mut eps in prop::collection::vec(0.01..2.5f64, 2..5),
        seed in any::<u64>(),
    ) {
        eps.sort_by(|a, b| b.total_cmp(a));
        eps.dedup();
        let cat = HyperbolicToralMap::cat_map();
        let grid = SampleGrid::jittered(24, seed);
        let m = discrete_moments(&target, family());
        let curves = basin_curves(&cat, &m, &eps, &[1, 3, 7, 12], &grid, family()).unwrap();
        for w in curves.windows(2) {
            for (big, small) in w[0].rows.iter().zip(&w[1].rows) {
                prop_assert!(small.hits <= big.hits);
                prop_assert!(big.hits <= big.samples);
            }
        }
        let again = basin_curves(&cat, &m, &eps, &[1, 3, 7, 12], &grid, family()).unwrap();
        prop_assert_eq!(curves, again);
    }

    #[test]
    fn cylinder_tables_marginalize_exactly(p in point(), depth in 2usize..10) {
        let cat = HyperbolicToralMap::cat_map();
        let source = CylinderSource::Orbit { start: p, length: 20_000 };
        let samples = CylinderSamples::collect(&cat, partition(), &source, depth).unwrap();
        let deep = samples.table(partition(), depth);
        let shallow = samples.table(partition(), depth - 1);
        prop_assert_eq!(deep.marginalize().counts, shallow.counts);
        prop_assert!(deep.counts.len() as u128 <= partition().admissible_words(depth));
        prop_assert!(samples.entropy(depth) <= (deep.counts.len() as f64).ln() + 1e-12);
    }
}
