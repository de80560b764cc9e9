//! AdamW with decoupled weight decay.

use std::sync::Arc;

use super::param::Parameter;
use super::{ParamSet, TensorError};

/// Decoupled-weight-decay Adam. The decay term `lr * wd * p` is applied
/// directly to the parameter, independent of the moment estimates.
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }

    /// One optimizer step over every parameter in the set, consuming the
    /// gradients currently stored on the parameters.
    pub fn step(&self, params: &mut ParamSet) -> Result<(), TensorError> {
        if self.lr <= 0.0 {
            return Err(TensorError::InvalidHyper { what: format!("learning rate must be > 0, got {}", self.lr) });
        }
        for p in params.iter_mut() {
            self.step_param(p);
        }
        Ok(())
    }

    fn step_param(&self, p: &mut Parameter) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let Parameter { value, grad, adam_m, adam_v, .. } = p;
        let data = Arc::make_mut(value.data_mut());
        for i in 0..data.len() {
            let g = grad[i];
            adam_m[i] = self.beta1 * adam_m[i] + (1.0 - self.beta1) * g;
            adam_v[i] = self.beta2 * adam_v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = adam_m[i] / bc1;
            let v_hat = adam_v[i] / bc2;
            data[i] -= self.lr * self.weight_decay * data[i] + self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
