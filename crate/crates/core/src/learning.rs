//! The data-collection loop: sample problems, plan candidates under the
//! current precondition, pick one, execute it open loop in the true
//! environment, and refit the estimator after every batch.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    alpha_trajectory, beta_schedule, select_trajectory, AcquisitionConfig, ScheduleConfig, ScheduleVariant,
};
use crate::env::{Environment, PlanningProblem};
use crate::error::{Error, Result};
use crate::mde::{
    label_transition, train_mde, EnvDataset, EnvTransition, Mde, MdeConfig, MdeDataset, PreconditionParams,
};
use crate::planner::{
    generate_candidates, random_rollout, rrt_plan, EnvTrajectory, PlannerConfig, Precondition, Trajectory,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ActiveGoalConditioned,
    GoalConditioned,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::ActiveGoalConditioned,
        Strategy::GoalConditioned,
        Strategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ActiveGoalConditioned => "active_goal_conditioned",
            Strategy::GoalConditioned => "goal_conditioned",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// Schedule shape; the iteration count comes from the loop's `J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSettings {
    pub k1: f64,
    pub k2: f64,
    pub variant: ScheduleVariant,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        let s = ScheduleConfig::new(1);
        Self {
            k1: s.k1,
            k2: s.k2,
            variant: s.variant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    #[serde(rename = "J")]
    pub iterations: usize,
    #[serde(rename = "M")]
    pub batch_size: usize,
    pub strategy: Strategy,
    pub acquisition: AcquisitionConfig,
    pub schedule: ScheduleSettings,
    pub planner: PlannerConfig,
    pub n_candidates: usize,
    pub seed: u64,
    pub d_max: f64,
    /// Bin candidates by diversity key where the environment defines bins.
    pub diversity_bins: bool,
    pub mde: MdeConfig,
    /// Unconstrained plans used to calibrate random-rollout lengths.
    pub calibration_problems: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            batch_size: 5,
            strategy: Strategy::ActiveGoalConditioned,
            acquisition: AcquisitionConfig::default(),
            schedule: ScheduleSettings::default(),
            planner: PlannerConfig::default(),
            n_candidates: 10,
            seed: 0,
            d_max: 0.1,
            diversity_bins: true,
            mde: MdeConfig::default(),
            calibration_problems: 20,
        }
    }
}

impl LearningConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            k1: self.schedule.k1,
            k2: self.schedule.k2,
            total_iterations: self.iterations.max(1),
            variant: self.schedule.variant,
        }
    }

    /// Check every field; errors carry the field's config path.
    pub fn validate(&self) -> Result<()> {
        let wrap = |field: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidArgument(m) => Error::config(field, m),
                other => other,
            })
        };
        if self.batch_size == 0 {
            return Err(Error::config("M", "must be at least 1"));
        }
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates", "must be at least 1"));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::config("d_max", "must be positive"));
        }
        if self.strategy == Strategy::Random && self.calibration_problems == 0 {
            return Err(Error::config(
                "calibration_problems",
                "random rollouts need at least one",
            ));
        }
        wrap("acquisition", self.acquisition.validate())?;
        wrap("schedule", self.schedule().validate())?;
        wrap("planner", self.planner.validate())?;
        wrap("mde", self.mde.validate())?;
        Ok(())
    }
}

/// Open-loop result of one trajectory.
#[derive(Clone, Debug)]
pub struct Execution<E: Environment> {
    pub trajectory: EnvTrajectory<E>,
    pub transitions: Vec<EnvTransition<E>>,
    pub truncated: bool,
}

/// Apply the planned actions from the observed states, stopping at the
/// first action that is not valid from where the system actually is.
pub fn execute_trajectory<E: Environment>(env: &E, t: &EnvTrajectory<E>) -> Result<Execution<E>> {
    let start = t
        .states
        .first()
        .ok_or_else(|| Error::invalid("trajectory has no start state"))?
        .clone();
    let mut observed = vec![start];
    let mut transitions = Vec::with_capacity(t.actions.len());
    let mut truncated = false;
    for a in &t.actions {
        let s = observed.last().expect("nonempty").clone();
        if !env.action_valid(&s, a) {
            truncated = true;
            break;
        }
        let Ok(next) = env.true_step(&s, a) else {
            truncated = true;
            break;
        };
        transitions.push(label_transition(env, &s, a, &next)?);
        observed.push(next);
    }
    let mut executed = t.clone();
    executed.executed_states = Some(observed);
    Ok(Execution {
        trajectory: executed,
        transitions,
        truncated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutedRecord<S, A, G> {
    pub problem_index: usize,
    pub problem: PlanningProblem<S, G>,
    pub trajectory: Trajectory<S, A>,
    pub n_candidates: usize,
    /// Utility of the selected candidate (active strategy only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub truncated: bool,
    pub n_transitions: usize,
    /// Goal predicate on the final observed state; not evaluated for random rollouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_reached: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<S, A, G> {
    pub iteration: usize,
    pub strategy: Strategy,
    pub beta_used: f64,
    pub trajectories: Vec<ExecutedRecord<S, A, G>>,
    /// Problems for which no trajectory could be produced.
    pub failed_problems: Vec<usize>,
    pub new_transitions: usize,
    pub dataset_size: usize,
    pub mde_snapshot: String,
    pub trajectory_types: BTreeMap<String, usize>,
}

pub type EnvRecord<E> =
    IterationRecord<<E as Environment>::State, <E as Environment>::Action, <E as Environment>::Goal>;

/// Snapshot name after `completed` iterations; `mde_000` is the prior.
pub fn snapshot_name(completed: usize) -> String {
    format!("mde_{completed:03}")
}

pub struct Learner<'e, E: Environment> {
    env: &'e E,
    cfg: LearningConfig,
    dataset: EnvDataset<E>,
    mde: Mde,
    rollout_lengths: Vec<usize>,
}

impl<'e, E: Environment> Learner<'e, E> {
    pub fn new(env: &'e E, cfg: LearningConfig) -> Result<Self> {
        cfg.validate()?;
        let mde = Mde::prior(env, &cfg.mde)?;
        let rollout_lengths = if cfg.strategy == Strategy::Random {
            calibrate_rollout_lengths(env, &cfg)?
        } else {
            Vec::new()
        };
        Ok(Self {
            env,
            cfg,
            dataset: MdeDataset::new(env),
            mde,
            rollout_lengths,
        })
    }

    pub fn mde(&self) -> &Mde {
        &self.mde
    }

    pub fn dataset(&self) -> &EnvDataset<E> {
        &self.dataset
    }

    pub fn config(&self) -> &LearningConfig {
        &self.cfg
    }

    pub fn rollout_lengths(&self) -> &[usize] {
        &self.rollout_lengths
    }

    /// Produce the trajectory to execute for problem `m` of iteration `j`.
    fn choose(
        &self,
        j: usize,
        m: usize,
        problem: &PlanningProblem<E::State, E::Goal>,
        precondition: &Precondition<'_, E>,
    ) -> Result<Option<(EnvTrajectory<E>, usize, Option<f64>)>> {
        let env = self.env;
        let cfg = &self.cfg;
        let name = cfg.strategy.as_str();
        let counters = [j as u64, m as u64];
        let mut strategy_rng = rng::stream(cfg.seed, &format!("{}/{name}", rng::STRATEGY), &counters);
        let timeout = Some(cfg.planner.training_timeout());
        match cfg.strategy {
            Strategy::Random => {
                let len = self.rollout_lengths[strategy_rng.random_range(0..self.rollout_lengths.len())];
                Ok(random_rollout(env, &problem.start, len, &mut strategy_rng)?.map(|t| (t, 1, None)))
            }
            Strategy::ActiveGoalConditioned | Strategy::GoalConditioned => {
                let seed = rng::derive_seed(cfg.seed, &format!("{}/{name}", rng::PLANNER), &counters);
                let candidates = generate_candidates(
                    env,
                    Some(precondition),
                    problem,
                    cfg.n_candidates,
                    cfg.diversity_bins,
                    &cfg.planner,
                    timeout,
                    seed,
                )?;
                if candidates.is_empty() {
                    return Ok(None);
                }
                let n = candidates.len();
                let (idx, alpha) = if cfg.strategy == Strategy::ActiveGoalConditioned {
                    let idx = select_trajectory(env, &self.mde, &candidates, &cfg.acquisition)?;
                    let alpha = alpha_trajectory(env, &self.mde, &candidates[idx], &cfg.acquisition)?;
                    (idx, Some(alpha))
                } else {
                    (strategy_rng.random_range(0..n), None)
                };
                Ok(candidates.into_iter().nth(idx).map(|t| (t, n, alpha)))
            }
        }
    }

    /// Run iteration `j`: `M` problems, execution, then one refit.
    pub fn run_iteration(&mut self, j: usize) -> Result<EnvRecord<E>> {
        let env = self.env;
        let beta = beta_schedule(j, &self.cfg.schedule());
        let params = PreconditionParams::new(self.cfg.d_max, beta)?;
        let mut trajectories = Vec::new();
        let mut failed = Vec::new();
        let mut new_transitions = 0;
        {
            let precondition = Precondition::new(env, &self.mde, params);
            for m in 0..self.cfg.batch_size {
                let problem = env.sample_problem(&mut rng::stream(self.cfg.seed, rng::PROBLEMS, &[j as u64, m as u64]));
                let Some((plan, n_candidates, alpha)) = self.choose(j, m, &problem, &precondition)? else {
                    debug!("iteration {j} problem {m}: no trajectory");
                    failed.push(m);
                    continue;
                };
                let ex = execute_trajectory(env, &plan)?;
                let last = ex.trajectory.executed_states.as_ref().and_then(|s| s.last());
                let goal_reached = match self.cfg.strategy {
                    Strategy::Random => None,
                    _ => last.map(|s| env.goal_reached(&problem.goal, s)),
                };
                new_transitions += ex.transitions.len();
                self.dataset.transitions.extend(ex.transitions.iter().cloned());
                trajectories.push(ExecutedRecord {
                    problem_index: m,
                    problem,
                    label: env.trajectory_label(&ex.trajectory),
                    n_transitions: ex.transitions.len(),
                    trajectory: ex.trajectory,
                    n_candidates,
                    alpha,
                    truncated: ex.truncated,
                    goal_reached,
                });
            }
        }
        self.mde = train_mde(
            env,
            &self.dataset,
            &self.cfg.mde,
            rng::derive_seed(self.cfg.seed, "train", &[j as u64]),
        )?;
        let mut trajectory_types = BTreeMap::new();
        for t in &trajectories {
            if let Some(l) = &t.label {
                *trajectory_types.entry(l.clone()).or_insert(0) += 1;
            }
        }
        info!(
            "{} iteration {j}: beta {beta:.3}, {} executed, {new_transitions} transitions, dataset {}",
            self.cfg.strategy,
            trajectories.len(),
            self.dataset.len()
        );
        Ok(IterationRecord {
            iteration: j,
            strategy: self.cfg.strategy,
            beta_used: beta,
            trajectories,
            failed_problems: failed,
            new_transitions,
            dataset_size: self.dataset.len(),
            mde_snapshot: snapshot_name(j + 1),
            trajectory_types,
        })
    }
}

/// Action counts of unconstrained goal-conditioned plans on calibration problems.
pub fn calibrate_rollout_lengths<E: Environment>(env: &E, cfg: &LearningConfig) -> Result<Vec<usize>> {
    let mut lengths = Vec::new();
    for k in 0..cfg.calibration_problems as u64 {
        let problem = env.sample_problem(&mut rng::stream(cfg.seed, "calibration", &[k]));
        let mut r = rng::stream(cfg.seed, "calibration_planner", &[k]);
        if let Some(t) = rrt_plan(
            env,
            None,
            &problem,
            &cfg.planner,
            Some(cfg.planner.training_timeout()),
            &mut r,
        )? {
            if t.num_actions() > 0 {
                lengths.push(t.num_actions());
            }
        }
    }
    if lengths.is_empty() {
        return Err(Error::Numerical(
            "no calibration problem could be planned; cannot size random rollouts".into(),
        ));
    }
    Ok(lengths)
}

pub struct LoopOutput<E: Environment> {
    pub records: Vec<EnvRecord<E>>,
    /// `J + 1` estimators: the prior, then one after each iteration.
    pub snapshots: Vec<Mde>,
    pub dataset: EnvDataset<E>,
}

/// Run all `J` iterations; `on_iteration` sees each record together with the
/// estimator and dataset it produced.
pub fn run_loop_with<E, F>(env: &E, cfg: &LearningConfig, mut on_iteration: F) -> Result<LoopOutput<E>>
where
    E: Environment,
    F: FnMut(&EnvRecord<E>, &Mde, &EnvDataset<E>) -> Result<()>,
{
    let mut learner = Learner::new(env, cfg.clone())?;
    let mut snapshots = vec![learner.mde().clone()];
    let mut records = Vec::with_capacity(cfg.iterations);
    for j in 0..cfg.iterations {
        let record = learner.run_iteration(j)?;
        on_iteration(&record, learner.mde(), learner.dataset())?;
        snapshots.push(learner.mde().clone());
        records.push(record);
    }
    Ok(LoopOutput {
        records,
        snapshots,
        dataset: learner.dataset,
    })
}

pub fn run_loop<E: Environment>(env: &E, cfg: &LearningConfig) -> Result<LoopOutput<E>> {
    run_loop_with(env, cfg, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Cell, GridWorld, GridWorldConfig, Move};

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn zero_batch_rejected_with_field_name() {
        let cfg = LearningConfig {
            batch_size: 0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "M"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn accurate_plan_executes_exactly() {
        let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
        let t = Trajectory {
            states: vec![Cell::new(0, 0), Cell::new(0, 1), Cell::new(1, 1)],
            actions: vec![Move::Up, Move::Right],
            executed_states: None,
            step_mu: vec![],
            step_sigma: vec![],
        };
        let ex = execute_trajectory(&w, &t).unwrap();
        assert_eq!(ex.trajectory.executed_states.as_ref().unwrap(), &t.states);
        assert!(ex.transitions.iter().all(|tr| tr.deviation == 0.0));
        assert!(!ex.truncated);
    }

    #[test]
    fn zero_iterations_gives_prior_only() {
        let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
        let cfg = LearningConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = run_loop(&w, &cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.snapshots.len(), 1);
        assert_eq!(out.snapshots[0].n_train(), 0);
    }
}
