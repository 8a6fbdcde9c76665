use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::TopologyPolicy;

/// Learning rates and optimiser settings shared by both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Initial network-weight learning rate `η`, cosine-annealed to zero per stage.
    pub w_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    /// Constant architecture learning rate `δ` (Adam).
    pub arch_lr: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    pub arch_weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            w_lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            grad_clip: Some(5.0),
            arch_lr: 3e-3,
            arch_beta1: 0.5,
            arch_beta2: 0.999,
            arch_weight_decay: 1e-3,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("w_lr", self.w_lr), ("arch_lr", self.arch_lr)];
        for (name, v) in positive {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "optimizer.{name} must be a non-negative number, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "optimizer.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("optimizer.grad_clip must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(
                "optimizer.batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which stages run, for how long, and with which strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagePlan {
    pub op_epochs: usize,
    pub topo_epochs: usize,
    /// Operation strategy registered under this name.
    pub strategy: String,
    pub policy: TopologyPolicy,
    /// Topology parameterisation: `none` (edge-combination weights) or one
    /// of the ablation baselines.
    pub baseline: String,
    /// Initial and final topology temperature.
    pub t0: f64,
    pub t_final: f64,
    /// Keep the operation-stage network weights for the topology stage
    /// instead of re-initialising them.
    pub inherit_weights: bool,
    pub sigmoid_threshold: f64,
    /// Retained-candidate file for the `external` strategy.
    pub external_ops: Option<PathBuf>,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            op_epochs: 30,
            topo_epochs: 40,
            strategy: "darts_top1".into(),
            policy: TopologyPolicy::Pairwise,
            baseline: "none".into(),
            t0: 10.0,
            t_final: 0.02,
            inherit_weights: false,
            sigmoid_threshold: 0.5,
            external_ops: None,
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if self.topo_epochs == 0 {
            return Err(Error::Config("plan.topo_epochs must be positive".into()));
        }
        if !(self.t0 > 0.0 && self.t_final > 0.0 && self.t_final <= self.t0) {
            return Err(Error::Config(format!(
                "plan temperatures must satisfy 0 < t_final <= t0, got {} and {}",
                self.t0, self.t_final
            )));
        }
        if !(0.0..1.0).contains(&self.sigmoid_threshold) || self.sigmoid_threshold == 0.0 {
            return Err(Error::Config(
                "plan.sigmoid_threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}
