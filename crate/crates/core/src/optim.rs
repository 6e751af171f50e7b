//! Bias-corrected adaptive-moment (Adam) optimizer.

use crate::error::{ensure, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters whose gradient is `None` keep their
    /// value and moments.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        ensure!(
            grads.len() == self.m.len() && store.len() == self.m.len(),
            "adam: optimizer tracks {} parameters, got {} gradients for {} parameters",
            self.m.len(),
            grads.len(),
            store.len()
        );
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (i, param) in store.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            ensure!(
                g.shape() == param.shape(),
                "adam: gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                param.shape()
            );
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(1.5);
        let mut opt = Adam::new(&s, AdamConfig::default());
        opt.step(&mut s, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(s.iter().next().unwrap().1.item(), 1.5);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn first_step_matches_transcribed_rule() {
        let mut s = store(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(&s, cfg);
        opt.step(&mut s, &[Some(Tensor::scalar(1.0))]).unwrap();
        // reference: m=0.1, v=0.001, mhat=1, vhat=1
        let m = 0.1 * 1.0;
        let v = 0.001 * 1.0;
        let mhat = m / (1.0 - 0.9f64);
        let vhat = v / (1.0 - 0.999f64);
        let want = 0.0 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        let got = s.iter().next().unwrap().1.item();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got + 0.1).abs() < 1e-7);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut s = store(3.0);
        let mut opt = Adam::new(&s, AdamConfig::default());
        let loss = |p: f64| (p - 1.0) * (p - 1.0);
        let mut last = loss(3.0);
        for _ in 0..2 {
            let p = s.iter().next().unwrap().1.item();
            opt.step(&mut s, &[Some(Tensor::scalar(2.0 * (p - 1.0)))]).unwrap();
            let now = loss(s.iter().next().unwrap().1.item());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn missing_gradient_is_skipped() {
        let mut s = store(2.0);
        let mut opt = Adam::new(&s, AdamConfig::default());
        opt.step(&mut s, &[None]).unwrap();
        assert_eq!(s.iter().next().unwrap().1.item(), 2.0);
    }
}
