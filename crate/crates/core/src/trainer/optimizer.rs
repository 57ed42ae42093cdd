//! Adaptive-moment optimizer with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
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

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

/// Per-parameter moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub slots: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn update(&mut self, opt: &AdamW, name: &str, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "gradient length for `{name}`");
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            steps: 0,
        });
        slot.steps += 1;
        let bc1 = 1.0 - opt.beta1.powi(slot.steps as i32);
        let bc2 = 1.0 - opt.beta2.powi(slot.steps as i32);
        for i in 0..params.len() {
            let g = grad[i];
            slot.m[i] = opt.beta1 * slot.m[i] + (1.0 - opt.beta1) * g;
            slot.v[i] = opt.beta2 * slot.v[i] + (1.0 - opt.beta2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            params[i] -= opt.lr * opt.weight_decay * params[i];
            params[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let opt = AdamW::new(0.1, 0.0);
        let mut state = OptimizerState::default();
        let mut p = vec![1.0, -1.0];
        state.update(&opt, "p", &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let opt = AdamW::new(0.05, 0.0);
        let mut state = OptimizerState::default();
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.5)];
            state.update(&opt, "p", &mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn zero_lr_is_identity() {
        let opt = AdamW::new(0.0, 0.01);
        let mut state = OptimizerState::default();
        let mut p = vec![0.7];
        state.update(&opt, "p", &mut p, &[1.0]);
        assert_eq!(p, vec![0.7]);
    }
}
