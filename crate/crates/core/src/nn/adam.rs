use super::params::ParamVector;
use crate::error::{EsilError, Result};

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            epsilon,
            beta1: 0.9,
            beta2: 0.999,
            step_count: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_count(&self) -> usize {
        self.first_moment.len()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Gradients are checked for finiteness before any state is touched, so a
    /// failed step leaves both the parameters and the moments unchanged.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(EsilError::dim("adam parameters", self.param_count(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(EsilError::dim("adam gradients", params.len(), grads.len()));
        }
        grads.ensure_finite("gradient")?;
        self.step_slice(params.values_mut(), grads.values());
        Ok(())
    }

    /// Unchecked inner update used by [`AdamState::step`].
    pub(crate) fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
