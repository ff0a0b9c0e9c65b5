//! Ground-truth environments paired with deliberately inaccurate dynamics
//! models.
//!
//! An [`Environment`] bundles the true dynamics, the model `f̂`, the
//! deviation metric, planning constraints, the planning-problem
//! distribution and the sampling hooks the RRT planner needs.

mod grid;
mod watering;

use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::Trajectory;
use crate::rng::StreamRng;

pub use grid::{Cell, GridWorld, GridWorldConfig, Move};
pub use watering::{Leaf, TrajectoryType, WaterAction, WaterGoal, WaterState, WateringConfig, WateringWorld};

/// Start state plus goal, sampled from an environment's problem distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem<S, G> {
    pub env: String,
    pub start: S,
    pub goal: G,
}

pub type Problem<E> = PlanningProblem<<E as Environment>::State, <E as Environment>::Goal>;

pub trait Environment: Sync {
    type State: Clone + PartialEq + Debug + Serialize + DeserializeOwned + Send + Sync;
    type Action: Clone + PartialEq + Debug + Serialize + DeserializeOwned + Send + Sync;
    type Goal: Clone + PartialEq + Debug + Serialize + DeserializeOwned + Send + Sync;

    fn id(&self) -> &'static str;

    /// Name of the feature map; MDE datasets never mix featurizers.
    fn featurizer(&self) -> String;

    fn feature_dim(&self) -> usize;

    /// MDE input for `(s, a)`.
    fn features(&self, s: &Self::State, a: &Self::Action) -> Vec<f64>;

    fn true_step(&self, s: &Self::State, a: &Self::Action) -> Result<Self::State>;

    /// The inaccurate dynamics model `f̂`.
    fn model_step(&self, s: &Self::State, a: &Self::Action) -> Result<Self::State>;

    fn distance(&self, a: &Self::State, b: &Self::State) -> f64;

    /// Environment constraints on a predicted edge `s --a--> next`.
    fn transition_allowed(&self, s: &Self::State, a: &Self::Action, next: &Self::State) -> bool;

    /// Whether `a` may be commanded from `s` during execution.
    fn action_valid(&self, s: &Self::State, a: &Self::Action) -> bool;

    fn sample_problem(&self, rng: &mut StreamRng) -> Problem<Self>;

    fn goal_reached(&self, goal: &Self::Goal, s: &Self::State) -> bool;

    /// Whether `s` satisfies the environment's state constraints.
    fn state_valid(&self, s: &Self::State) -> bool;

    // Planner hooks.

    fn sample_state(&self, rng: &mut StreamRng) -> Self::State;

    /// A state that satisfies (or leads to) the goal, used for goal biasing.
    fn sample_goal_state(&self, problem: &Problem<Self>, rng: &mut StreamRng) -> Self::State;

    /// Metric for nearest-neighbour queries in the tree.
    fn planning_distance(&self, a: &Self::State, b: &Self::State) -> f64;

    /// Candidate actions from `from` toward `toward`, best first.
    fn steer(
        &self,
        from: &Self::State,
        toward: &Self::State,
        goal_directed: bool,
        rng: &mut StreamRng,
    ) -> Vec<Self::Action>;

    /// Hashable identity for discrete state spaces; the planner keeps at
    /// most one tree node per key.
    fn discrete_key(&self, _s: &Self::State) -> Option<u64> {
        None
    }

    /// Scalar used for candidate diversity binning, if the environment bins.
    fn diversity_value(&self, _t: &Trajectory<Self::State, Self::Action>) -> Option<f64> {
        None
    }

    /// Height-bin edges for diversity binning; empty disables binning.
    fn diversity_bin_edges(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Category of an executed trajectory, for environments that track them.
    fn trajectory_label(&self, _t: &Trajectory<Self::State, Self::Action>) -> Option<String> {
        None
    }
}

/// Serializable environment definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Gridworld(GridWorldConfig),
    Watering(WateringConfig),
}

impl EnvConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Gridworld(_) => "gridworld",
            EnvConfig::Watering(_) => "watering",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Gridworld(c) => GridWorld::from_config(c).map(|_| ()),
            EnvConfig::Watering(c) => WateringWorld::from_config(c).map(|_| ()),
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Gridworld(GridWorldConfig::default())
    }
}

pub(crate) fn check_unit_interval(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be an interval with lower < upper")))
    }
}
