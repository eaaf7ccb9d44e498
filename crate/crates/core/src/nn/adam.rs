use crate::error::{shape_err, Result};

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }

    /// Applies one bias-corrected Adam step in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(shape_err!(
                "Adam state holds {} parameters; got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
