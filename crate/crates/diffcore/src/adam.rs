//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::DiffError;
use crate::param::{GradStore, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over every gradient in `grads`. Parameters without a
/// gradient this step are left untouched (their moments do not decay).
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradStore,
    state: &mut OptimizerState,
) -> Result<(), DiffError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (key, g) in grads.iter() {
        let p = params.get_mut(key);
        p.check_same_shape(g, &format!("adam_step `{key}`"))?;
        let (m, v) = state.moments.entry(key.clone()).or_insert_with(|| {
            (
                Tensor::zeros(g.rows(), g.cols()),
                Tensor::zeros(g.rows(), g.cols()),
            )
        });
        if m.shape() != g.shape() {
            return Err(DiffError::ShapeMismatch {
                what: format!("adam moment `{key}`"),
                lhs: m.shape(),
                rhs: g.shape(),
            });
        }
        for i in 0..g.len() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::row(&[1.0, -2.0]));
        let mut grads = GradStore::new();
        grads.accumulate("w", &Tensor::row(&[0.3, -7.0]));
        let mut state = OptimizerState::adam(0.05);
        adam_step(&mut params, &grads, &mut state).unwrap();
        // First step: m_hat = g, v_hat = g^2, so |update| = lr * |g| / (|g| + eps).
        let w = params.get("w");
        assert!((w.get(0, 0) - (1.0 - 0.05)).abs() < 1e-6);
        assert!((w.get(0, 1) - (-2.0 + 0.05)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::row(&[1.5]));
        let mut grads = GradStore::new();
        grads.accumulate("w", &Tensor::row(&[0.0]));
        let mut state = OptimizerState::adam(0.1);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.get("w").get(0, 0), 1.5);
    }

    #[test]
    fn two_steps_match_hand_iterated_recurrence() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(0.0));
        let mut state = OptimizerState::adam(0.1);
        let mut grads = GradStore::new();
        grads.accumulate("w", &Tensor::scalar(1.0));
        adam_step(&mut params, &grads, &mut state).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();

        // Hand iteration of the Adam recurrence with g = 1, lr = 0.1.
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut w = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((params.get("w").get(0, 0) - w).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::row(&[1.0, 2.0]));
        let mut grads = GradStore::new();
        grads.accumulate("w", &Tensor::row(&[1.0]));
        let mut state = OptimizerState::adam(0.1);
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }

    #[test]
    fn step_counter_increments() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(0.0));
        let mut state = OptimizerState::adam(0.1);
        let mut grads = GradStore::new();
        grads.accumulate("w", &Tensor::scalar(0.5));
        for expect in 1..=3 {
            adam_step(&mut params, &grads, &mut state).unwrap();
            assert_eq!(state.step_count(), expect);
        }
    }
}
