//! Bias-corrected Adam over one flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam state; moment buffers are shaped like the flattened parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Standard defaults beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(param_len: usize, learning_rate: f64) -> Self {
        Self::with_hyperparams(param_len, learning_rate, 0.9, 0.999, 1e-8)
            .expect("default Adam hyperparameters are valid")
    }

    pub fn with_hyperparams(
        param_len: usize,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {beta1}, {beta2}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::Config(format!("Adam epsilon must be > 0, got {epsilon}")));
        }
        if learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        Ok(Self {
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update in place. A non-finite gradient signals a
    /// training blow-up and aborts the run with a diagnostic.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "Adam state holds {} parameters, got params {} / grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient component {} is {} at Adam step {}",
                i,
                grads[i],
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
