use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2: `weight_decay * theta` is added to the gradient of every
    /// parameter flagged as decayed.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [Array2<f64>],
        grads: &[Array2<f64>],
        decay: &[bool],
    ) -> Result<()> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Contract(format!(
                "learning rate {} must be positive",
                cfg.lr
            )));
        }
        if params.len() != self.m.len()
            || grads.len() != params.len()
            || decay.len() != params.len()
        {
            return Err(Error::Contract(
                "adam step with mismatched parameter lists".into(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            if params[k].dim() != grads[k].dim() {
                return Err(Error::shape("adam_step", format!("parameter {k}")));
            }
            let wd = if decay[k] { cfg.weight_decay } else { 0.0 };
            Zip::from(&mut params[k])
                .and(&grads[k])
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }
}
