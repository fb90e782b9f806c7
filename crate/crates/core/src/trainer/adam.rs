use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Learning rate used for randomly initialized toy models.
    pub const TOY_LR: f64 = 3e-4;
    /// Learning rate used when fine-tuning a full-size pre-trained model.
    pub const FULL_SCALE_LR: f64 = 6.25e-5;

    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(Self::TOY_LR)
    }
}

/// Bias-corrected Adam update of one tensor. `t` is the step number after
/// incrementing (1 on the first step).
pub fn adam_apply<F: Scalar>(cfg: &AdamConfig, t: u64, param: &mut [F], grad: &[F], m: &mut [F], v: &mut [F]) {
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let one = F::one();
    let c1 = one - F::from_f64(cfg.beta1.powi(t as i32));
    let c2 = one - F::from_f64(cfg.beta2.powi(t as i32));
    let lr = F::from_f64(cfg.lr);
    let eps = F::from_f64(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update of every parameter. `grads` must hold a same-shape
    /// gradient for each parameter.
    pub fn update(&mut self, params: &mut ModelParams<F>, grads: &BTreeMap<String, Tensor<F>>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, (name, p)) in params.iter().enumerate() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Dimension(format!("no gradient for {name}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_update",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let cfg = self.config;
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let g = &grads[name];
            adam_apply(&cfg, self.t, p.data_mut(), g.data(), self.m[i].data_mut(), self.v[i].data_mut());
        }
        Ok(())
    }
}
