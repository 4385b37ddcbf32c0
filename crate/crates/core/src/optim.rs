//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, contract_err, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(config_err("Adam betas must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(config_err("Adam learning rate and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            step: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            config,
        })
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(contract_err("Adam: parameter, gradient and state lengths differ"));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Result<Self> {
        let states = params
            .iter()
            .map(|(_, _, t)| AdamState::new(t.numel(), config))
            .collect::<Result<_>>()?;
        Ok(Self { states, config })
    }

    /// Applies accumulated gradients scaled by `grad_scale`, then clears
    /// them. Parameters without a gradient see a zero gradient, which
    /// keeps every state on the same step count.
    pub fn step(&mut self, params: &mut ParamStore, grad_scale: f64) -> Result<()> {
        if self.states.len() != params.len() {
            return Err(contract_err("optimizer built for a different parameter set"));
        }
        for (tensor, state) in params.tensors_mut().iter_mut().zip(&mut self.states) {
            if !tensor.requires_grad {
                continue;
            }
            let grad: Vec<f64> = match tensor.grad.take() {
                Some(g) => g.into_iter().map(|v| v * grad_scale).collect(),
                None => vec![0.0; tensor.numel()],
            };
            state.step(tensor.data_mut(), &grad)?;
        }
        Ok(())
    }
}
