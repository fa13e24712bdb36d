mod oracles;

use proptest::prelude::*;
use rand::Rng;

use cortex_core::estimator::{em_reestimate, forward_filter, total_log_likelihood, BeliefState};

#[test]
fn filter_matches_path_enumeration() {
    for seed in 0..300 {
        let err = oracles::filter_error(seed);
        assert!(err <= 1e-10, "seed {seed}: {err:e}");
    }
}

#[test]
fn em_never_lowers_the_likelihood() {
    let mut r = oracles::rng(5);
    for d in 0..20 {
        let (n, m, a) = (r.random_range(2..=4), r.random_range(2..=4), r.random_range(1..=2));
        let truth = oracles::random_params(&mut r, n, m, a);
        let data = oracles::sample_episodes(&mut r, &truth, 8, 12);
        let init = oracles::random_params(&mut r, n, m, a);
        let report = em_reestimate(&data, &init, 10).unwrap();
        assert_eq!(report.log_likelihoods.len(), 11);
        assert!((report.log_likelihoods[0] - total_log_likelihood(&data, &init).unwrap()).abs() < 1e-9);
        let last = *report.log_likelihoods.last().unwrap();
        assert!((last - total_log_likelihood(&data, &report.params).unwrap()).abs() < 1e-9);
        for w in report.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "dataset {d}: {} -> {}", w[0], w[1]);
        }
    }
}

proptest! {
    #[test]
    fn filter_agrees_on_any_instance(seed in any::<u64>()) {
        prop_assert!(oracles::filter_error(seed) <= 1e-10);
    }

    #[test]
    fn belief_stays_a_distribution(seed in any::<u64>(), len in 1usize..40) {
        let mut r = oracles::rng(seed);
        let params = oracles::random_params(&mut r, 4, 3, 2);
        let mut b = BeliefState::uniform(4);
        for _ in 0..len {
            b = forward_filter(&b, r.random_range(0..2), r.random_range(0..3), &params).unwrap().belief;
            prop_assert!(b.is_normalized());
            prop_assert!(b.0.iter().all(|p| *p >= 0.0));
        }
    }
}
