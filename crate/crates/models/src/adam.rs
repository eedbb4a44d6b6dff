//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamParams {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub fn adam_step(weights: &mut [f64], grads: &[f64], state: &mut AdamState, p: &AdamParams) {
    assert_eq!(weights.len(), grads.len(), "adam: weight and gradient lengths differ");
    assert_eq!(weights.len(), state.m.len(), "adam: state length differs");
    state.step += 1;
    let c1 = 1.0 - p.beta1.powi(state.step as i32);
    let c2 = 1.0 - p.beta2.powi(state.step as i32);
    for i in 0..weights.len() {
        let g = grads[i];
        state.m[i] = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
        state.v[i] = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        weights[i] -= p.lr * (m_hat / (v_hat.sqrt() + p.eps) + p.weight_decay * weights[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut w = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut w, &[0.0; 3], &mut s, &AdamParams::new(0.1, 0.0));
        }
        assert_eq!(w, vec![1.0, -2.0, 3.5]);
        adam_step(&mut w, &[0.0; 3], &mut s, &AdamParams::new(0.1, 0.5));
        assert!((w[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let p = AdamParams::new(1e-3, 0.0);
        for g in [0.3, -7.0] {
            let mut w = vec![0.0];
            let mut s = AdamState::new(1);
            for _ in 0..2000 {
                adam_step(&mut w, &[g], &mut s, &p);
            }
            let before = w[0];
            adam_step(&mut w, &[g], &mut s, &p);
            let step = w[0] - before;
            assert!((step + p.lr * g.signum()).abs() <= 0.01 * p.lr, "{step}");
        }
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut w = vec![0.5, 0.25];
            let mut s = AdamState::new(2);
            for i in 0..50 {
                let g = [w[0] - 1.0 + i as f64 * 0.01, w[1] * 2.0];
                adam_step(&mut w, &g, &mut s, &AdamParams::new(0.05, 1e-4));
            }
            w
        };
        assert_eq!(run(), run());
    }
}
