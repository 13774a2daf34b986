//! Adaptive-moment (Adam) parameter updates.

use serde::{Deserialize, Serialize};

use crate::net::NetParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates and the number of steps taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step with learning rate `lr`.
///
/// # Panics
/// If `grad` or the state does not have one entry per parameter.
pub fn optimizer_step(params: &mut NetParams, grad: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grad.len(), "gradient length");
    assert_eq!(params.len(), state.m.len(), "optimizer state length");
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for (((p, &g), m), v) in params.values.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
