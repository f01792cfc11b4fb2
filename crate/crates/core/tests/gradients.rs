mod common;

use common::{backprop_violation, unbiasedness};

#[test]
fn backprop_matches_central_differences() {
    let worst = backprop_violation(20, 42);
    assert!(worst <= 1.0, "violation ratio {worst}");
}

#[test]
fn gradient_estimate_is_unbiased_for_the_frozen_empirical_loss() {
    for seed in [1, 2, 3] {
        for c in unbiasedness(seed, 10, 200_000) {
            assert!(c.z() <= 2.0, "seed {seed}: {c:?}");
        }
    }
}
