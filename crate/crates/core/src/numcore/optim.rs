use serde::{Deserialize, Serialize};

use crate::numcore::{ParamGrads, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.8, beta2: 0.99, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam with decoupled weight decay. Masked entries are pinned to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let decay = T::lit(c.lr * c.weight_decay);
        let eps = T::lit(c.eps);
        for (id, p) in store.iter_mut() {
            let g = &grads.grads[id.0];
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = p.tensor.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] = w[i] - decay * w[i] - lr * mh / (vh.sqrt() + eps);
            }
            if let Some(mask) = &p.mask {
                for i in 0..w.len() {
                    if mask[i] == T::zero() {
                        w[i] = T::zero();
                        m[i] = T::zero();
                        v[i] = T::zero();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{ParamKind, Tensor};

    #[test]
    fn zero_lr_leaves_weights_bitwise() {
        let mut store = ParamStore::<f32>::new();
        let id = store.insert("w", ParamKind::Linear, Tensor::from_f64(&[3], &[0.1, -0.2, 0.3]).unwrap()).unwrap();
        let before = store.clone();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.0), &store);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.grads[id.0] = vec![1.0, -2.0, 0.5];
        opt.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", ParamKind::Linear, Tensor::from_f64(&[1], &[3.0]).unwrap()).unwrap();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.05), &store);
        for _ in 0..400 {
            let w = store.get(id).tensor.data()[0];
            let mut g = ParamGrads::zeros_like(&store);
            g.grads[0] = vec![2.0 * w];
            opt.step(&mut store, &g);
        }
        assert!(store.get(id).tensor.data()[0].abs() < 0.05);
    }

    #[test]
    fn masked_entries_stay_zero() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", ParamKind::ConvWeight, Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap()).unwrap();
        store.set_mask(id, Some(vec![0.0, 1.0])).unwrap();
        let mut opt = AdamW::new(AdamWConfig::with_lr(0.1), &store);
        for _ in 0..100 {
            let mut g = ParamGrads::zeros_like(&store);
            g.grads[0] = vec![1.0, 1.0];
            opt.step(&mut store, &g);
        }
        assert_eq!(store.get(id).tensor.data()[0], 0.0);
    }
}
