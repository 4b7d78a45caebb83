mod common;

use common::grad_cases::{loss_cases, op_cases};

const TOL: f64 = 1e-3;

#[test]
fn every_op_matches_finite_differences() {
    for (name, err) in op_cases() {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn every_composite_loss_matches_finite_differences() {
    for (name, err) in loss_cases() {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}
