use evslab_autograd::gradcheck::primitive_suite;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, err) in primitive_suite() {
        assert!(err < 1e-4, "{name}: {err}");
    }
}
