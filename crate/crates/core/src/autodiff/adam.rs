use super::tensor::ParamStore;
use super::{AutodiffError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 coefficient: `weight_decay * theta` is added to each gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, p)| vec![0.0; p.value.len()])
            .collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `params`, then
    /// clears them. Fails without touching any parameter if a gradient is
    /// not finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((_, bad)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient(bad.name.clone()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for ((param, m), v) in params
            .params_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if param.requires_grad {
                let values = param.value.data_mut();
                for (((theta, g), m), v) in values
                    .iter_mut()
                    .zip(param.grad.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    let g = g + weight_decay * *theta;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            param.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::row(vec![0.3, -1.2])).unwrap();
        let mut adam = Adam::new(cfg(0.1, 0.0), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(store.id("p").unwrap()).data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.insert("p", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(cfg(2e-4, 0.0), &store);
        store.params_mut()[0].grad.data_mut()[0] = 1.0;
        adam.step(&mut store).unwrap();
        let moved = store.value(id).item() - 1.0;
        let expected = -2e-4 / (1.0 + 1e-8);
        assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
        assert_eq!(store.grad(id).item(), 0.0);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::row(vec![0.5, 0.25])).unwrap();
        let b = store.insert("b", Tensor::row(vec![0.5, 0.25])).unwrap();
        let mut adam = Adam::new(cfg(1e-2, 5e-5), &store);
        for step in 0..4 {
            for p in store.params_mut() {
                p.grad
                    .data_mut()
                    .copy_from_slice(&[0.1 * step as f64, -0.3]);
            }
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(a), store.value(b));
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut store = ParamStore::new();
        let id = store.insert("p", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(cfg(0.1, 0.0), &store);
        store.params_mut()[0].grad.data_mut()[0] = f64::NAN;
        let err = adam.step(&mut store).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(store.value(id).item(), 1.0);
    }

    #[test]
    fn frozen_params_are_not_updated() {
        let mut store = ParamStore::new();
        let id = store.insert("p", Tensor::scalar(1.0)).unwrap();
        store.set_requires_grad(id, false);
        let mut adam = Adam::new(cfg(0.1, 0.0), &store);
        store.params_mut()[0].grad.data_mut()[0] = 1.0;
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id).item(), 1.0);
    }
}
