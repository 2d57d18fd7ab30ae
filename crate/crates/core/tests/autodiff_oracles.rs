mod support;

use support::oracles::{network_cases, op_cases, worst_error};

#[test]
fn every_operation_matches_central_differences() {
    for case in op_cases() {
        let err = worst_error(&case, 10).unwrap();
        assert!(err <= 1e-5, "{}: relative error {err:e}", case.name);
    }
}

#[test]
fn toy_network_loss_matches_central_differences() {
    for case in network_cases() {
        let err = worst_error(&case, 10).unwrap();
        assert!(err <= 1e-5, "{}: relative error {err:e}", case.name);
    }
}
