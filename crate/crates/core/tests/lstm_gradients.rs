mod common;

use common::{worst_gradient_error, Stencil};
use proptest::prelude::*;

#[test]
fn small_reference_network_matches_finite_differences() {
    let err = worst_gradient_error(&[2], 2, 1, 5, 1, 42, Stencil::Central2(1e-6));
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn batched_gradients_match_finite_differences() {
    let err = worst_gradient_error(&[3, 2], 2, 2, 6, 3, 7, Stencil::Central4(2e-3));
    assert!(err < 1e-5, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_networks_match_finite_differences(
        cells in prop::collection::vec(1usize..=5, 1..=3),
        n_in in 1usize..=3,
        n_out in 1usize..=3,
        steps in 1usize..=8,
        batch in 1usize..=2,
        seed in any::<u64>(),
    ) {
        let err = worst_gradient_error(&cells, n_in, n_out, steps, batch, seed, Stencil::Central4(2e-3));
        prop_assert!(err < 1e-5, "relative error {}", err);
    }
}
