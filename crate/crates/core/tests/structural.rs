mod common;

#[test]
fn ansatz_constraints_hold_for_random_parameters() {
    let s = common::structural_checks(1000, 42);
    assert!(s.call_edge <= 1e-12, "call at k=1: {:e}", s.call_edge);
    assert!(s.put_edge <= 1e-12, "put at k=0: {:e}", s.put_edge);
    assert_eq!(s.call_bound_violations, 0);
    assert_eq!(s.negative_eta, 0);
    assert!(s.weight_mean_error <= 1e-12, "{:e}", s.weight_mean_error);
}
