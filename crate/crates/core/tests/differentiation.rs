mod common;

use common::{jet_fd_error, param_gradient_fd};

#[test]
fn price_jets_match_finite_differences() {
    let err = jet_fd_error(100, 2024);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let g = param_gradient_fd(77);
    assert!(g.value_loss < 1e-4, "value losses: {:e}", g.value_loss);
    assert!(g.dkk_loss < 1e-3, "d_kk losses: {:e}", g.dkk_loss);
}
