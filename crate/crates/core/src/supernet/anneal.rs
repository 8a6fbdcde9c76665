//! Exponential temperature schedules `T(t) = T₀ · θᵗ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperature schedule, advanced once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub t_final: f64,
    pub theta: f64,
    pub total_steps: usize,
    pub step: usize,
}

impl AnnealSchedule {
    /// Schedule reaching `t_final` after `total_steps` decays.
    /// With `total_steps == 0` the temperature stays at `t0`.
    pub fn new(t0: f64, t_final: f64, total_steps: usize) -> Result<Self> {
        if !(t0 > 0.0 && t_final > 0.0 && t0.is_finite() && t_final.is_finite()) {
            return Err(Error::invalid(format!(
                "temperatures must be positive, got {t0} → {t_final}"
            )));
        }
        if t_final > t0 {
            return Err(Error::invalid(format!(
                "annealing must not increase temperature ({t0} → {t_final})"
            )));
        }
        let theta = if total_steps == 0 {
            1.0
        } else {
            (t_final / t0).powf(1.0 / total_steps as f64)
        };
        Ok(AnnealSchedule {
            t0,
            t_final,
            theta,
            total_steps,
            step: 0,
        })
    }

    /// Schedule covering `epochs` epochs, so the last epoch runs at `t_final`.
    pub fn over_epochs(t0: f64, t_final: f64, epochs: usize) -> Result<Self> {
        Self::new(t0, t_final, epochs.saturating_sub(1))
    }

    /// Fixed temperature (`θ = 1`).
    pub fn constant(t: f64) -> Result<Self> {
        Self::new(t, t, 0)
    }

    pub fn temperature_at(&self, step: usize) -> f64 {
        self.t0 * self.theta.powi(step as i32)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature_at(self.step)
    }

    /// Advance one step and return the new temperature.
    pub fn anneal_step(&mut self) -> f64 {
        self.step += 1;
        self.temperature()
    }

    /// Same schedule with every temperature multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> AnnealSchedule {
        AnnealSchedule {
            t0: self.t0 * factor,
            t_final: self.t_final * factor,
            ..self.clone()
        }
    }
}

/// Which stage of the search is running.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchPhase {
    Operation,
    Topology { group_search: bool },
}

/// Ratio between operation and topology temperatures under group search.
pub const DUAL_TEMPERATURE_RATIO: f64 = 1e-3;

/// Operation-weight schedule that tracks `T_α(t) = T_β(t) / 1000`. Only
/// meaningful while a group search runs its topology stage.
pub fn dual_temperature(beta: &AnnealSchedule, phase: SearchPhase) -> Result<AnnealSchedule> {
    match phase {
        SearchPhase::Topology { group_search: true } => Ok(beta.scaled(DUAL_TEMPERATURE_RATIO)),
        other => Err(Error::invalid(format!(
            "dual temperature applies only to the topology stage of a group search (phase: {other:?})"
        ))),
    }
}
