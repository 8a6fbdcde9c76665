//! First-order optimizers and learning-rate schedules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// `lr0 · (1 + cos(π · step / total_steps)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine schedule needs total_steps > 0"));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr0 * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// SGD with heavy-ball momentum, L2 weight decay and optional global-norm
/// gradient clipping. Momentum buffers are keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64, grad_clip: Option<f64>) -> Self {
        Sgd {
            momentum,
            weight_decay,
            grad_clip,
            buffers: BTreeMap::new(),
        }
    }

    /// Clip is applied to the raw gradients before weight decay is added.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        params.require_grads()?;
        let clip_scale = match self.grad_clip {
            Some(max_norm) => {
                let norm = params.grad_norm();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for p in params.iter_mut() {
            let grad = p.grad.as_ref().expect("checked above");
            let buf = self
                .buffers
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            for ((w, g), v) in p.value.data_mut().iter_mut().zip(grad).zip(buf.iter_mut()) {
                let d = g * clip_scale + self.weight_decay * *w;
                *v = self.momentum * *v + d;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction and L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        params.require_grads()?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params.iter_mut() {
            let grad = p.grad.as_ref().expect("checked above");
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] + self.weight_decay * *w;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                *w -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
