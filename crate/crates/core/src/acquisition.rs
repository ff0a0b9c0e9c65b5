//! Trajectory acquisition: a lower-confidence-bound utility per step,
//! discounted aggregation over a trajectory, and the risk-tolerance schedule
//! for the precondition during training.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mde::Mde;
use crate::planner::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    Max,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Exploration weight on σ.
    pub c: f64,
    pub gamma: f64,
    pub mode: AggregateMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: 0.9,
            mode: AggregateMode::Max,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c must be nonnegative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleVariant {
    SigmoidFull,
    SigmoidCapped,
    FixedLow,
    FixedHigh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_k2")]
    pub k2: f64,
    /// Total iterations `J`.
    #[serde(rename = "J")]
    pub total_iterations: usize,
    #[serde(default = "default_variant")]
    pub variant: ScheduleVariant,
}

fn default_k1() -> f64 {
    2.0
}

fn default_k2() -> f64 {
    0.5
}

fn default_variant() -> ScheduleVariant {
    ScheduleVariant::SigmoidFull
}

impl ScheduleConfig {
    pub fn new(total_iterations: usize) -> Self {
        Self {
            k1: default_k1(),
            k2: default_k2(),
            total_iterations,
            variant: default_variant(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k1.is_finite() && self.k2.is_finite()) {
            return Err(Error::invalid("k1 and k2 must be positive"));
        }
        if self.total_iterations == 0 {
            return Err(Error::invalid("J must be at least 1"));
        }
        Ok(())
    }
}

/// `μ − cσ`.
pub fn alpha_step(mu: f64, sigma: f64, c: f64) -> f64 {
    mu - c * sigma
}

/// `max_t γ^t v_t` or `Σ_t γ^t v_t` with `t` starting at 0.
pub fn aggregate(values: &[f64], gamma: f64, mode: AggregateMode) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty sequence"));
    }
    let mut discount = 1.0;
    let scaled = values.iter().map(|v| {
        let out = discount * v;
        discount *= gamma;
        out
    });
    Ok(match mode {
        AggregateMode::Max => scaled.fold(f64::NEG_INFINITY, f64::max),
        AggregateMode::Sum => scaled.sum(),
    })
}

pub fn alpha_trajectory<E: Environment>(
    env: &E,
    mde: &Mde,
    t: &Trajectory<E::State, E::Action>,
    cfg: &AcquisitionConfig,
) -> Result<f64> {
    let steps = t
        .actions
        .iter()
        .zip(&t.states)
        .map(|(a, s)| {
            let (mu, sigma) = mde.predict(env, s, a)?;
            Ok(alpha_step(mu, sigma, cfg.c))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&steps, cfg.gamma, cfg.mode)
}

/// Index of the candidate with the lowest utility; ties go to the earliest.
pub fn select_trajectory<E: Environment>(
    env: &E,
    mde: &Mde,
    candidates: &[Trajectory<E::State, E::Action>],
    cfg: &AcquisitionConfig,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, t) in candidates.iter().enumerate() {
        let a = alpha_trajectory(env, mde, t, cfg)?;
        if a < best.1 {
            best = (i, a);
        }
    }
    Ok(best.0)
}

/// Precondition confidence multiplier for training iteration `j`.
pub fn beta_schedule(j: usize, cfg: &ScheduleConfig) -> f64 {
    let sigmoid = || {
        let x = j as f64 - cfg.total_iterations as f64 / 2.0;
        2.0 * cfg.k1 / (1.0 + (-cfg.k2 * x).exp()) - cfg.k1
    };
    match cfg.variant {
        ScheduleVariant::SigmoidFull => sigmoid(),
        ScheduleVariant::SigmoidCapped => sigmoid().min(1.0),
        ScheduleVariant::FixedLow => -cfg.k1,
        ScheduleVariant::FixedHigh => 1.0,
    }
}
