use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Adam {
            config,
            step: 0,
            first_moment: Gradients::zeros_like(store),
            second_moment: Gradients::zeros_like(store),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (k, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let g = &grads.data[k];
            let m = &mut self.first_moment.data[k];
            let v = &mut self.second_moment.data[k];
            for i in 0..tensor.data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                tensor.data[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Rescales `grads` so that its global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimises_a_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = store.add("p", &[3], Init::Glorot { fan_in: 1, fan_out: 1 }, &mut rng);
        let target = [1.0, -2.0, 0.5];
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..3000 {
            let mut g = Gradients::zeros_like(&store);
            for i in 0..3 {
                g.get_mut(p)[i] = 2.0 * (store.get(p)[i] - target[i]);
            }
            adam.update(&mut store, &g, 1e-2);
        }
        for i in 0..3 {
            assert!((store.get(p)[i] - target[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = store.add("p", &[4], Init::Glorot { fan_in: 1, fan_out: 1 }, &mut rng);
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(p).iter_mut().for_each(|v| *v = 1.0);
        adam.update(&mut store, &g, 0.0);
        assert_eq!(before, store);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = store.add("p", &[2], Init::Zeros, &mut rng);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(p).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
