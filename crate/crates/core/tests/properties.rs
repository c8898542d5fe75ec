mod common;

use common::props;
use mlta::metrics::predicted_probs;
use mlta::Params;
use proptest::prelude::*;

fn check(res: props::Check) -> Result<(), TestCaseError> {
    res.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_identities(seed in any::<u64>()) {
        check(props::posterior_identities(seed))?;
    }

    #[test]
    fn gauge_shift_invariance(seed in any::<u64>(), c in -3.0..3.0f64) {
        check(props::gauge_invariance(seed, c))?;
    }

    #[test]
    fn ari_is_symmetric_and_label_invariant(
        a in prop::collection::vec(0usize..4, 2..40),
        seed in any::<u64>(),
    ) {
        check(props::ari_invariance(&a, seed))?;
    }

    #[test]
    fn alignment_is_exhaustively_optimal(seed in any::<u64>(), q in 1usize..=3) {
        check(props::alignment_optimal(seed, q))?;
    }

    #[test]
    fn relabeling_preserves_the_likelihood(seed in any::<u64>()) {
        check(props::relabel_likelihood(seed))?;
    }

    #[test]
    fn bootstrap_covariance_is_psd(
        rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 1..25),
    ) {
        check(props::bootstrap_psd(rows))?;
    }

    #[test]
    fn predicted_probabilities_increase_with_intercepts(b in -30.0..30.0f64, step in 1e-3..5.0f64) {
        let p = |v: f64| Params {
            beta: vec![],
            b: vec![vec![v]],
            w: mlta::Loadings::Shared(vec![vec![1.0]]),
            gamma: vec![0.0],
            rho: vec![1.0],
        };
        let lo = predicted_probs(&p(b))[0][0];
        let hi = predicted_probs(&p(b + step))[0][0];
        prop_assert!(lo < hi && lo > 0.0 && hi < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn logit_derivatives_match_finite_differences(seed in any::<u64>()) {
        check(props::logit_finite_differences(seed))?;
    }

    #[test]
    fn zeta_update_is_stationary(seed in any::<u64>(), d in 1usize..=2) {
        check(props::zeta_stationary(seed, d))?;
    }
}
