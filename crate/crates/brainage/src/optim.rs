//! Adam with inverse-time learning-rate decay.
//!
//! Semantics follow the framework convention the paper's settings come from:
//! the decayed rate is `lr0 / (1 + decay * iterations)` with `iterations`
//! counted before the current update, and bias correction is folded into the
//! step size.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// Inverse-time decay coefficient per update step.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            decay: 1e-4,
            // beta1 = 0.5 is the stable GAN setting.
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Optimizer state for one network: first/second moments per tensor plus the
/// update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
    pub iterations: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, tensors: &[(String, &ArrayD<T>)]) -> Self {
        let m = tensors.iter().map(|(_, t)| ArrayD::zeros(t.raw_dim())).collect();
        let v = tensors.iter().map(|(_, t)| ArrayD::zeros(t.raw_dim())).collect();
        Adam {
            config,
            m,
            v,
            iterations: 0,
        }
    }

    /// Learning rate that will be applied to the next update.
    pub fn current_lr(&self) -> f64 {
        self.config.learning_rate / (1.0 + self.config.decay * self.iterations as f64)
    }

    /// Apply one update. `grads[i]` of `None` leaves tensor `i` untouched
    /// (a parameter with no path into the objective).
    pub fn step(&mut self, params: &mut [&mut ArrayD<T>], grads: &[Option<ArrayD<T>>]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        assert_eq!(params.len(), grads.len(), "gradient/parameter mismatch");
        let lr = self.current_lr();
        let t = (self.iterations + 1) as i32;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let one = T::one();
        let bias1 = 1.0 - self.config.beta1.powi(t);
        let bias2 = 1.0 - self.config.beta2.powi(t);
        let lr_t = T::lit(lr * bias2.sqrt() / bias1);
        let eps = T::lit(self.config.epsilon);

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(g) = grad else { continue };
            ndarray::Zip::from(&mut **param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - lr_t * *m / (v.sqrt() + eps);
                });
        }
        self.iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn minimizes_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            decay: 0.0,
            ..AdamConfig::default()
        };
        let mut x = ArrayD::from_elem(IxDyn(&[1]), 3.0f64);
        let mut adam = Adam::new(cfg, &[("x".to_string(), &x)]);
        for _ in 0..200 {
            let g = x.mapv(|v| v); // d/dx of x^2/2
            adam.step(&mut [&mut x], &[Some(g)]);
        }
        assert!(x[[0]].abs() < 1e-2, "x = {}", x[[0]]);
    }

    #[test]
    fn inverse_time_decay_schedule() {
        let cfg = AdamConfig {
            learning_rate: 1e-4,
            decay: 1e-4,
            ..AdamConfig::default()
        };
        let mut x = ArrayD::from_elem(IxDyn(&[1]), 1.0f64);
        let mut adam = Adam::new(cfg, &[("x".to_string(), &x)]);
        assert_eq!(adam.current_lr(), 1e-4);
        for k in 1..=100u64 {
            let g = ArrayD::from_elem(IxDyn(&[1]), 1.0f64);
            adam.step(&mut [&mut x], &[Some(g)]);
            let expected = 1e-4 / (1.0 + 1e-4 * k as f64);
            assert!((adam.current_lr() - expected).abs() < 1e-18);
        }
    }

    #[test]
    fn first_step_size_is_one_learning_rate() {
        // With bias correction, the first Adam step is ~lr * sign(g).
        let cfg = AdamConfig {
            learning_rate: 0.01,
            decay: 0.0,
            ..AdamConfig::default()
        };
        let mut x = ArrayD::from_elem(IxDyn(&[1]), 0.0f64);
        let mut adam = Adam::new(cfg, &[("x".to_string(), &x)]);
        let g = ArrayD::from_elem(IxDyn(&[1]), 5.0f64);
        adam.step(&mut [&mut x], &[Some(g)]);
        assert!((x[[0]] + 0.01).abs() < 1e-6, "step was {}", x[[0]]);
    }

    #[test]
    fn missing_gradients_leave_tensor_untouched() {
        let cfg = AdamConfig::default();
        let mut x = ArrayD::from_elem(IxDyn(&[2]), 1.5f32);
        let mut adam = Adam::new(cfg, &[("x".to_string(), &x)]);
        adam.step(&mut [&mut x], &[None]);
        assert_eq!(x[[0]], 1.5);
        assert_eq!(adam.iterations, 1);
    }
}
