use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

/// Adam moments and hyper-parameters. Steps *ascend* the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One Adam ascent step on every parameter that has a gradient.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        assert_eq!(
            g.shape(),
            p.raw.shape(),
            "gradient shape mismatch for {name}"
        );
        let (r, c) = g.shape();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(r, c));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(r, c));
        for (((x, gi), mi), vi) in p
            .raw
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *x += state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Constraint;

    fn store(v: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("p", Tensor::scalar(v), Constraint::None);
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = store(1.5);
        let mut st = AdamState::new(0.1);
        let g = BTreeMap::from([("p".to_string(), Tensor::scalar(0.0))]);
        adam_step(&mut ps, &g, &mut st);
        adam_step(&mut ps, &g, &mut st);
        assert_eq!(ps.get("p").unwrap().raw.item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = store(0.0);
        let mut st = AdamState::new(0.1);
        let g = BTreeMap::from([("p".to_string(), Tensor::scalar(1.0))]);
        adam_step(&mut ps, &g, &mut st);
        // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
        assert!((ps.get("p").unwrap().raw.item() - 0.1).abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let g = BTreeMap::from([("p".to_string(), Tensor::scalar(0.3))]);
        let run = || {
            let mut ps = store(0.2);
            let mut st = AdamState::new(0.05);
            for _ in 0..5 {
                adam_step(&mut ps, &g, &mut st);
            }
            (ps, st)
        };
        assert_eq!(run(), run());
    }
}
