//! NAdam (Adam with Nesterov momentum and a momentum-decay schedule).
//!
//! With `μ_t = β₁(1 − ½·0.96^{tψ})`:
//!
//! ```text
//! m_t = β₁ m + (1 − β₁) g
//! v_t = β₂ v + (1 − β₂) g²
//! m̂   = μ_{t+1} m_t / (1 − Π_{i≤t+1} μ_i) + (1 − μ_t) g / (1 − Π_{i≤t} μ_i)
//! v̂   = v_t / (1 − β₂^t)
//! p  -= η m̂ / (sqrt(v̂) + ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NAdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum_decay: f64,
}

impl NAdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum_decay: 0.004,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NAdamState {
    pub config: NAdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    mu_product: f64,
}

impl NAdamState {
    pub fn new(config: NAdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            mu_product: 1.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    fn mu(&self, t: u64) -> f64 {
        let c = &self.config;
        c.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * c.momentum_decay))
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::arg(format!(
                "optimizer tracks {} parameters, got {} values and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let c = self.config.clone();
        let mu = self.mu(t);
        let mu_next = self.mu(t + 1);
        self.mu_product *= mu;
        let mu_product_next = self.mu_product * mu_next;
        let bias2 = 1.0 - c.beta2.powi(t as i32);

        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat =
                mu_next * *m / (1.0 - mu_product_next) + (1.0 - mu) * g / (1.0 - self.mu_product);
            let v_hat = *v / bias2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_from_zero_state_is_noop() {
        let mut st = NAdamState::new(NAdamConfig::new(0.01), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn identical_inputs_get_identical_updates() {
        let mut st = NAdamState::new(NAdamConfig::new(0.01), 2);
        let mut p = vec![0.3, 0.3];
        for g in [0.5, -1.0, 2.0] {
            st.step(&mut p, &[g, g]).unwrap();
            assert_eq!(p[0].to_bits(), p[1].to_bits());
        }
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // Hand evaluation of the update rule for p=0, g=1, η=1e-3:
        //   μ₁ = 0.9(1 − ½·0.96^0.004), μ₂ = 0.9(1 − ½·0.96^0.008)
        //   m = 0.1, v = 0.001, v̂ = 1
        //   m̂ = μ₂·0.1/(1 − μ₁μ₂) + (1 − μ₁)/(1 − μ₁)
        let mu1 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.004));
        let mu2 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.008));
        let m_hat = mu2 * 0.1 / (1.0 - mu1 * mu2) + 1.0;
        let expected = -1e-3 * m_hat / (1.0 + 1e-8);
        assert_relative_eq!(expected, -1.056_451_767_790_870_5e-3, max_relative = 1e-14);
        // torch.optim.NAdam with default settings lands on -1.056451780770273e-3
        assert_relative_eq!(expected, -1.056_451_780_770_273e-3, max_relative = 1e-7);

        let mut st = NAdamState::new(NAdamConfig::new(1e-3), 1);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        assert_relative_eq!(p[0], expected, max_relative = 1e-12);
    }

    #[test]
    fn constant_positive_gradient_always_decreases() {
        let mut st = NAdamState::new(NAdamConfig::new(0.0025), 1);
        let mut p = vec![0.0];
        for _ in 0..500 {
            let before = p[0];
            st.step(&mut p, &[0.7]).unwrap();
            assert!(p[0] < before);
        }
        assert!(st.second_moment()[0] >= 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = NAdamState::new(NAdamConfig::new(0.01), 2);
        assert!(st.step(&mut [0.0], &[1.0]).is_err());
    }
}
