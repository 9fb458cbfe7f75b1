use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter of one store, with one learning rate
/// per parameter group.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    learning_rates: Vec<f64>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig, learning_rates: Vec<f64>) -> Self {
        let first: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            config,
            learning_rates,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self, group: usize) -> f64 {
        self.learning_rates
            .get(group)
            .or(self.learning_rates.last())
            .copied()
            .unwrap_or(0.0)
    }

    /// One bias-corrected Adam update over every trainable parameter,
    /// then clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            let t = store.get(id);
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::Contract(format!(
                    "parameter {} has no gradient",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids() {
            let lr = self.learning_rate(store.group(id));
            let tensor = store.get_mut(id);
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.take_grad().expect("checked above");
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (((w, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
