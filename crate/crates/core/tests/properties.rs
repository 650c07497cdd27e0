//! Property tests for the solver and metric invariants.

use proptest::prelude::*;

use otaffl::metrics::{fairness_std, percentile_means};
use otaffl::moo::{
    linear_scalarize, project_simplex, solve_inner_weights, ChebyshevConfig, ObjectiveVector,
    WeightVector,
};

fn simplex_strategy(max_k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2..=max_k).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    })
}

proptest! {
    /// Solutions stay inside the box around the averaging weights and on
    /// the simplex.
    #[test]
    fn inner_solution_is_feasible(
        avg in simplex_strategy(10),
        epsilon in 0.0f64..1.0,
        seed_scores in prop::collection::vec(-3.0f64..3.0, 10),
    ) {
        let k = avg.len();
        let scores = seed_scores[..k].to_vec();
        let objectives = ObjectiveVector::new(scores).unwrap();
        let cfg = ChebyshevConfig::with_zero_reference(
            epsilon,
            WeightVector::new(avg.clone()).unwrap(),
        ).unwrap();
        let solved = solve_inner_weights(&objectives, &cfg).unwrap();
        let sum: f64 = solved.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        for (w, a) in solved.as_slice().iter().zip(&avg) {
            prop_assert!(*w >= (a - epsilon).max(0.0) - 1e-12);
            prop_assert!(*w <= (a + epsilon).min(1.0) + 1e-12);
        }
    }

    /// A larger feasible box can only improve the achieved objective.
    #[test]
    fn inner_objective_monotone_in_radius(
        avg in simplex_strategy(8),
        eps_pair in (0.0f64..1.0, 0.0f64..1.0),
        seed_scores in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let k = avg.len();
        let scores = seed_scores[..k].to_vec();
        let (eps_a, eps_b) = eps_pair;
        let (small, large) = if eps_a <= eps_b { (eps_a, eps_b) } else { (eps_b, eps_a) };
        let objectives = ObjectiveVector::new(scores).unwrap();
        let weights = WeightVector::new(avg).unwrap();
        let value = |eps: f64| {
            let cfg = ChebyshevConfig::with_zero_reference(eps, weights.clone()).unwrap();
            let solved = solve_inner_weights(&objectives, &cfg).unwrap();
            linear_scalarize(&objectives, &solved).unwrap()
        };
        prop_assert!(value(large) >= value(small) - 1e-12);
    }

    /// Adding a constant to every objective shifts the achieved value by
    /// that constant without moving the maximizer.
    #[test]
    fn inner_solution_shift_invariant(
        avg in simplex_strategy(8),
        epsilon in 0.0f64..1.0,
        shift in -5.0f64..5.0,
        seed_scores in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let k = avg.len();
        let scores = seed_scores[..k].to_vec();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let weights = WeightVector::new(avg).unwrap();
        let cfg = ChebyshevConfig::with_zero_reference(epsilon, weights).unwrap();
        let base = solve_inner_weights(&ObjectiveVector::new(scores.clone()).unwrap(), &cfg).unwrap();
        let moved = solve_inner_weights(&ObjectiveVector::new(shifted.clone()).unwrap(), &cfg).unwrap();
        prop_assert_eq!(base.as_slice(), moved.as_slice());
        let v_base = linear_scalarize(&ObjectiveVector::new(scores).unwrap(), &base).unwrap();
        let v_moved = linear_scalarize(&ObjectiveVector::new(shifted).unwrap(), &moved).unwrap();
        prop_assert!((v_moved - (v_base + shift)).abs() <= 1e-9);
    }

    /// Simplex projection returns a feasible point no further from the
    /// input than any sampled feasible point.
    #[test]
    fn simplex_projection_feasible_and_optimal(
        v in prop::collection::vec(-3.0f64..3.0, 2..8),
        competitor in simplex_strategy(8),
    ) {
        let projected = project_simplex(&v).unwrap();
        let sum: f64 = projected.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        if competitor.len() == v.len() {
            let d_proj: f64 = projected.as_slice().iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            let d_comp: f64 = competitor.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(d_proj <= d_comp + 1e-12);
        }
    }

    /// Population deviation scales with |a| under affine maps.
    #[test]
    fn fairness_std_affine(
        values in prop::collection::vec(-10.0f64..10.0, 1..20),
        a in -4.0f64..4.0,
        b in -10.0f64..10.0,
    ) {
        let base = fairness_std(&values).unwrap();
        let mapped: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let scaled = fairness_std(&mapped).unwrap();
        prop_assert!((scaled - a.abs() * base).abs() <= 1e-9 * (1.0 + base));
    }

    /// With the full fraction, both percentile tails equal the mean.
    #[test]
    fn percentile_full_fraction_is_mean(
        values in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (worst, best) = percentile_means(&values, 1.0).unwrap();
        prop_assert!((worst - mean).abs() <= 1e-12);
        prop_assert!((best - mean).abs() <= 1e-12);
    }

    /// Restriction plus renormalization lands back on the simplex.
    #[test]
    fn restricted_weights_renormalize(
        avg in simplex_strategy(10),
        keep_mask in prop::collection::vec(prop::bool::ANY, 10),
    ) {
        let weights = WeightVector::new(avg.clone()).unwrap();
        let kept: Vec<usize> = (0..avg.len()).filter(|&i| keep_mask[i]).collect();
        if kept.is_empty() {
            prop_assert!(weights.restrict_and_renormalize(&kept).is_err());
        } else {
            let restricted = weights.restrict_and_renormalize(&kept).unwrap();
            let sum: f64 = restricted.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert_eq!(restricted.len(), kept.len());
        }
    }
}
