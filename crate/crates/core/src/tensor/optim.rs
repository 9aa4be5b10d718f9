//! Adaptive-moment optimizer with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }

    /// One update over `(name, parameter, gradient)` triples.
    ///
    /// Validates every gradient before touching any parameter: a NaN
    /// gradient aborts the whole step and names the offending parameter.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: Vec<(&str, &mut Tensor, &Tensor)>,
    ) -> Result<()> {
        for (name, param, grad) in &params {
            if grad.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient((*name).to_string()));
            }
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, param, grad) in params {
            let n = param.numel();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let dtype = param.dtype();
            let data = param.data_mut();
            for i in 0..n {
                let g = grad.data()[i];
                // Decoupled decay: shrink the parameter, not the gradient.
                let mut p = data[i] * (1.0 - cfg.lr * cfg.weight_decay);
                m[i] = dtype.quantize(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
                v[i] = dtype.quantize(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                data[i] = dtype.quantize(p);
            }
        }
        Ok(())
    }
}
