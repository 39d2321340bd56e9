mod common;

use common::checks::{
    adversary_fixture, backward_fixture, full_step_fixture, penalty_fixture, FIXTURES, FULL_STEP_TOL, PENALTY_TOL,
};

#[test]
fn corr_penalty_gradient_matches_finite_differences() {
    for seed in 0..FIXTURES {
        let err = penalty_fixture(seed);
        assert!(err <= PENALTY_TOL, "fixture {seed}: relative error {err:e}");
    }
}

#[test]
fn adversary_gradients_match_finite_differences() {
    for seed in 0..FIXTURES {
        let (head, input) = adversary_fixture(seed);
        assert!(head <= PENALTY_TOL, "fixture {seed}: head {head:e}");
        assert!(input <= PENALTY_TOL, "fixture {seed}: input {input:e}");
    }
}

#[test]
fn backward_matches_finite_differences() {
    for seed in 0..FIXTURES {
        let err = backward_fixture(seed);
        assert!(err <= PENALTY_TOL, "fixture {seed}: relative error {err:e}");
    }
}

#[test]
fn assembled_step_matches_finite_differences() {
    for seed in 0..FIXTURES {
        let err = full_step_fixture(seed);
        assert!(err <= FULL_STEP_TOL, "fixture {seed}: relative error {err:e}");
    }
}
