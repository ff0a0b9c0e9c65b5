//! RRT over environment states using the dynamics model for forward
//! prediction, optionally restricted to the model precondition.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Problem};
use crate::error::{Error, Result};
use crate::mde::{Mde, PreconditionParams};
use crate::rng::{self, StreamRng};

/// Predicted states `ŝ_1..ŝ_T` and the actions between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Deserialize<'de>, A: Deserialize<'de>"))]
pub struct Trajectory<S, A> {
    pub states: Vec<S>,
    pub actions: Vec<A>,
    /// Observed states after open-loop execution; shorter than `states`
    /// when execution was truncated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executed_states: Option<Vec<S>>,
    /// Estimator mean and std at each planned step, empty when planning
    /// without an estimator.
    #[serde(default)]
    pub step_mu: Vec<f64>,
    #[serde(default)]
    pub step_sigma: Vec<f64>,
}

pub type EnvTrajectory<E> = Trajectory<<E as Environment>::State, <E as Environment>::Action>;

impl<S, A> Trajectory<S, A> {
    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub max_expansions: usize,
    /// Wall-clock limit for plans made while collecting training data.
    pub training_timeout_secs: f64,
    pub goal_bias: f64,
    /// Extension steps a goal-biased connect may take.
    pub connect_steps: usize,
    /// Tree nodes tried, nearest first, before an extension counts as failed.
    pub nearest_candidates: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_expansions: 5000,
            training_timeout_secs: 30.0,
            goal_bias: 0.1,
            connect_steps: 50,
            nearest_candidates: 4,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_expansions == 0 {
            return Err(Error::invalid("max_expansions must be at least 1"));
        }
        if !(self.training_timeout_secs > 0.0) {
            return Err(Error::invalid("training_timeout_secs must be positive"));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::invalid("goal_bias must be a probability"));
        }
        if self.connect_steps == 0 || self.nearest_candidates == 0 {
            return Err(Error::invalid(
                "connect_steps and nearest_candidates must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn training_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.training_timeout_secs)
    }
}

/// Precondition check with a memo of estimator queries keyed by the exact
/// feature vector.
pub struct Precondition<'a, E: Environment> {
    env: &'a E,
    mde: &'a Mde,
    params: PreconditionParams,
    cache: RefCell<HashMap<Vec<u64>, (f64, f64)>>,
}

impl<'a, E: Environment> Precondition<'a, E> {
    pub fn new(env: &'a E, mde: &'a Mde, params: PreconditionParams) -> Self {
        Self {
            env,
            mde,
            params,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &PreconditionParams {
        &self.params
    }

    pub fn mde(&self) -> &Mde {
        self.mde
    }

    pub fn predict(&self, s: &E::State, a: &E::Action) -> Result<(f64, f64)> {
        let x = self.env.features(s, a);
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&hit) = self.cache.borrow().get(&key) {
            return Ok(hit);
        }
        let out = self.mde.predict(self.env, s, a)?;
        self.cache.borrow_mut().insert(key, out);
        Ok(out)
    }

    /// `(admitted, μ, σ)` for `(s, a)`.
    pub fn check(&self, s: &E::State, a: &E::Action) -> Result<(bool, f64, f64)> {
        let (mu, sigma) = self.predict(s, a)?;
        Ok((self.params.admits(mu, sigma), mu, sigma))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub expansions: usize,
    pub tree_size: usize,
    pub timed_out: bool,
}

struct Node<S, A> {
    state: S,
    parent: Option<usize>,
    action: Option<A>,
    mu: f64,
    sigma: f64,
}

struct Tree<'p, 'e, E: Environment> {
    env: &'e E,
    precondition: Option<&'p Precondition<'e, E>>,
    nodes: Vec<Node<E::State, E::Action>>,
    keys: HashSet<u64>,
}

impl<'p, 'e, E: Environment> Tree<'p, 'e, E> {
    /// Indices of up to `k` nodes closest to `target`, ties by insertion order.
    fn nearest(&self, target: &E::State, k: usize) -> Vec<usize> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = self.env.planning_distance(&n.state, target);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    /// Try the steering actions from `from` in order; add the first edge
    /// that passes every constraint.
    fn extend(
        &mut self,
        from: usize,
        target: &E::State,
        goal_directed: bool,
        rng: &mut StreamRng,
    ) -> Result<Option<usize>> {
        let state = self.nodes[from].state.clone();
        for a in self.env.steer(&state, target, goal_directed, rng) {
            let Ok(next) = self.env.model_step(&state, &a) else {
                continue;
            };
            if !self.env.transition_allowed(&state, &a, &next) {
                continue;
            }
            let key = self.env.discrete_key(&next);
            if key.is_some_and(|k| self.keys.contains(&k)) {
                continue;
            }
            let (mu, sigma) = match self.precondition {
                Some(p) => {
                    let (ok, mu, sigma) = p.check(&state, &a)?;
                    if !ok {
                        continue;
                    }
                    (mu, sigma)
                }
                None => (f64::NAN, f64::NAN),
            };
            if let Some(k) = key {
                self.keys.insert(k);
            }
            self.nodes.push(Node {
                state: next,
                parent: Some(from),
                action: Some(a),
                mu,
                sigma,
            });
            return Ok(Some(self.nodes.len() - 1));
        }
        Ok(None)
    }

    fn path_to(&self, mut idx: usize) -> Trajectory<E::State, E::Action> {
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        loop {
            let n = &self.nodes[idx];
            states.push(n.state.clone());
            match (&n.action, n.parent) {
                (Some(a), Some(p)) => {
                    actions.push(a.clone());
                    mu.push(n.mu);
                    sigma.push(n.sigma);
                    idx = p;
                }
                _ => break,
            }
        }
        states.reverse();
        actions.reverse();
        mu.reverse();
        sigma.reverse();
        if self.precondition.is_none() {
            mu.clear();
            sigma.clear();
        }
        Trajectory {
            states,
            actions,
            executed_states: None,
            step_mu: mu,
            step_sigma: sigma,
        }
    }
}

/// Grow an RRT from `problem.start` until a predicted state satisfies the
/// goal, the expansion budget runs out, or `timeout` elapses.
pub fn rrt_plan<E: Environment>(
    env: &E,
    precondition: Option<&Precondition<'_, E>>,
    problem: &Problem<E>,
    cfg: &PlannerConfig,
    timeout: Option<Duration>,
    rng: &mut StreamRng,
) -> Result<Option<Trajectory<E::State, E::Action>>> {
    Ok(rrt_plan_with_stats(env, precondition, problem, cfg, timeout, rng)?.0)
}

pub fn rrt_plan_with_stats<E: Environment>(
    env: &E,
    precondition: Option<&Precondition<'_, E>>,
    problem: &Problem<E>,
    cfg: &PlannerConfig,
    timeout: Option<Duration>,
    rng: &mut StreamRng,
) -> Result<(Option<Trajectory<E::State, E::Action>>, PlanStats)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut tree = Tree {
        env,
        precondition,
        nodes: vec![Node {
            state: problem.start.clone(),
            parent: None,
            action: None,
            mu: f64::NAN,
            sigma: f64::NAN,
        }],
        keys: HashSet::new(),
    };
    if let Some(k) = env.discrete_key(&problem.start) {
        tree.keys.insert(k);
    }
    let mut stats = PlanStats::default();
    let finish = |tree: &Tree<E>, stats: &mut PlanStats| stats.tree_size = tree.nodes.len();

    if env.goal_reached(&problem.goal, &problem.start) {
        finish(&tree, &mut stats);
        return Ok((Some(tree.path_to(0)), stats));
    }

    let out_of_time = || timeout.is_some_and(|t| started.elapsed() >= t);
    while stats.expansions < cfg.max_expansions {
        if out_of_time() {
            stats.timed_out = true;
            break;
        }
        let goal_directed = rng.random::<f64>() < cfg.goal_bias;
        let target = if goal_directed {
            env.sample_goal_state(problem, rng)
        } else {
            env.sample_state(rng)
        };

        stats.expansions += 1;
        let mut added = None;
        for from in tree.nearest(&target, cfg.nearest_candidates) {
            if let Some(i) = tree.extend(from, &target, goal_directed, rng)? {
                added = Some(i);
                break;
            }
        }
        let mut steps = 1;
        while let Some(i) = added {
            if env.goal_reached(&problem.goal, &tree.nodes[i].state) {
                finish(&tree, &mut stats);
                return Ok((Some(tree.path_to(i)), stats));
            }
            if !goal_directed || steps >= cfg.connect_steps || stats.expansions >= cfg.max_expansions || out_of_time() {
                break;
            }
            stats.expansions += 1;
            steps += 1;
            added = tree.extend(i, &target, true, rng)?;
        }
    }
    finish(&tree, &mut stats);
    Ok((None, stats))
}

/// Bin of a trajectory among the environment's diversity bins; 0 when the
/// environment does not bin.
pub fn diversity_key<E: Environment>(env: &E, t: &Trajectory<E::State, E::Action>) -> usize {
    let edges = env.diversity_bin_edges();
    match env.diversity_value(t) {
        Some(v) if !edges.is_empty() => edges.iter().filter(|&&e| v >= e).count(),
        _ => 0,
    }
}

/// Run independent seeded searches until `n` goal-reaching trajectories
/// are collected or `3n` attempts are spent. With binning, at most
/// `⌈n / bins⌉` candidates are kept per diversity bin.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidates<E: Environment>(
    env: &E,
    precondition: Option<&Precondition<'_, E>>,
    problem: &Problem<E>,
    n: usize,
    use_bins: bool,
    cfg: &PlannerConfig,
    timeout: Option<Duration>,
    seed: u64,
) -> Result<Vec<Trajectory<E::State, E::Action>>> {
    if n == 0 {
        return Err(Error::invalid("n_candidates must be at least 1"));
    }
    let n_bins = env.diversity_bin_edges().len() + 1;
    let per_bin = if use_bins && n_bins > 1 { n.div_ceil(n_bins) } else { n };
    let mut counts = vec![0usize; n_bins];
    let mut out = Vec::new();
    for attempt in 0..3 * n as u64 {
        let mut r = rng::stream(seed, "candidate", &[attempt]);
        let Some(t) = rrt_plan(env, precondition, problem, cfg, timeout, &mut r)? else {
            continue;
        };
        let bin = if use_bins { diversity_key(env, &t) } else { 0 };
        if counts[bin] >= per_bin {
            continue;
        }
        counts[bin] += 1;
        out.push(t);
        if out.len() == n {
            break;
        }
    }
    Ok(out)
}

/// Roll out up to `length` random actions from `start` using the planner's
/// state sampler and steering, respecting environment constraints only.
pub fn random_rollout<E: Environment>(
    env: &E,
    start: &E::State,
    length: usize,
    rng: &mut StreamRng,
) -> Result<Option<Trajectory<E::State, E::Action>>> {
    const TRIES_PER_STEP: usize = 20;
    let mut states = vec![start.clone()];
    let mut actions = Vec::new();
    'steps: for _ in 0..length {
        let cur = states.last().expect("nonempty").clone();
        for _ in 0..TRIES_PER_STEP {
            let target = env.sample_state(rng);
            let mut options = Vec::new();
            for a in env.steer(&cur, &target, false, rng) {
                if let Ok(next) = env.model_step(&cur, &a) {
                    if env.transition_allowed(&cur, &a, &next) {
                        options.push((a, next));
                    }
                }
            }
            if !options.is_empty() {
                let (a, next) = options.swap_remove(rng.random_range(0..options.len()));
                actions.push(a);
                states.push(next);
                continue 'steps;
            }
        }
        break;
    }
    if actions.is_empty() {
        return Ok(None);
    }
    Ok(Some(Trajectory {
        states,
        actions,
        executed_states: None,
        step_mu: Vec::new(),
        step_sigma: Vec::new(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Cell, GridWorld, GridWorldConfig, PlanningProblem};

    fn empty_grid() -> GridWorld {
        let cfg = GridWorldConfig {
            map: vec![".........."; 10].into_iter().map(String::from).collect(),
            ..Default::default()
        };
        GridWorld::from_config(&cfg).unwrap()
    }

    fn problem(start: Cell, goal: Cell) -> PlanningProblem<Cell, Cell> {
        PlanningProblem {
            env: "gridworld".into(),
            start,
            goal,
        }
    }

    #[test]
    fn adjacent_goal_one_step() {
        let w = empty_grid();
        let mut r = rng::seeded(0);
        let t = rrt_plan(
            &w,
            None,
            &problem(Cell::new(4, 4), Cell::new(4, 5)),
            &PlannerConfig::default(),
            None,
            &mut r,
        )
        .unwrap()
        .unwrap();
        assert_eq!(t.num_actions(), 1);
        assert_eq!(t.states, vec![Cell::new(4, 4), Cell::new(4, 5)]);
    }

    #[test]
    fn walled_off_goal_fails_within_budget() {
        let cfg = GridWorldConfig {
            map: vec!["....#....."; 10].into_iter().map(String::from).collect(),
            ..Default::default()
        };
        let w = GridWorld::from_config(&cfg).unwrap();
        let mut r = rng::seeded(1);
        let pc = PlannerConfig::default();
        let (t, stats) =
            rrt_plan_with_stats(&w, None, &problem(Cell::new(0, 0), Cell::new(9, 9)), &pc, None, &mut r).unwrap();
        assert!(t.is_none());
        assert!(stats.expansions <= pc.max_expansions);
        assert_eq!(stats.tree_size, 40);
    }

    #[test]
    fn predicted_states_chain() {
        let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
        let mut r = rng::seeded(2);
        for _ in 0..20 {
            let p = w.sample_problem(&mut r);
            let t = rrt_plan(&w, None, &p, &PlannerConfig::default(), None, &mut r)
                .unwrap()
                .unwrap();
            assert_eq!(t.states.len(), t.actions.len() + 1);
            for i in 0..t.actions.len() {
                assert_eq!(t.states[i + 1], w.model_step(t.states[i], t.actions[i]));
            }
            assert_eq!(t.states[0], p.start);
            assert_eq!(*t.states.last().unwrap(), p.goal);
        }
    }

    #[test]
    fn random_rollout_has_requested_length() {
        let w = empty_grid();
        let mut r = rng::seeded(3);
        let t = random_rollout(&w, &Cell::new(5, 5), 7, &mut r).unwrap().unwrap();
        assert_eq!(t.num_actions(), 7);
    }
}
