mod common;

use common::{check_gradients, random_problem};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn extended_jacobian_matches_finite_differences(seed in any::<u64>(), big in any::<bool>()) {
        let sizes: &[usize] = if big { &[4, 7, 3] } else { &[2, 2, 2] };
        let p = random_problem(sizes, 4, seed);
        let r = check_gradients(&p);
        prop_assert_eq!(r.mismatches, 0, "τ = {}, worst ratio {}", p.tau, r.worst);
    }
}
