use std::collections::HashMap;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: HashMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Apply one update to every `(name, grad)` pair; parameters absent from
    /// `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)]) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let one = T::one();

        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments as checkpoint records (`adam.m/<name>`, `adam.v/<name>`, `adam.step`).
    pub fn to_store(&self) -> ParamStore<T> {
        let mut names: Vec<&String> = self.moments.keys().collect();
        names.sort();
        let mut s = ParamStore::new();
        s.insert("adam.step", Tensor::scalar(T::of(self.step as f64)));
        for n in names {
            let (m, v) = &self.moments[n];
            s.insert(format!("adam.m/{n}"), m.clone());
            s.insert(format!("adam.v/{n}"), v.clone());
        }
        s
    }
}
