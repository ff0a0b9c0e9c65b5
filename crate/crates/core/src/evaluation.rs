//! Test-time evaluation of estimator snapshots: precondition classification
//! on held-out transitions, plan-found rate and open-loop goal success.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, Problem};
use crate::error::{Error, Result};
use crate::learning::execute_trajectory;
use crate::mde::{EnvDataset, EnvTransition, Mde, PreconditionParams};
use crate::planner::{rrt_plan, PlannerConfig, Precondition};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub beta_test: f64,
    pub d_max: f64,
    pub n_test_problems: usize,
    pub max_expansions: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            beta_test: 2.0,
            d_max: 0.1,
            n_test_problems: 20,
            max_expansions: 5000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_test_problems == 0 {
            return Err(Error::config("n_test_problems", "must be at least 1"));
        }
        if self.max_expansions == 0 {
            return Err(Error::config("max_expansions", "must be at least 1"));
        }
        PreconditionParams::new(self.d_max, self.beta_test).map_err(|e| Error::config("d_max", e.to_string()))?;
        Ok(())
    }

    pub fn params(&self) -> Result<PreconditionParams> {
        PreconditionParams::new(self.d_max, self.beta_test)
    }
}

/// `(predicted_in, actually_in)` for one held-out transition.
pub fn classify_point<E: Environment>(
    env: &E,
    mde: &Mde,
    t: &EnvTransition<E>,
    params: &PreconditionParams,
) -> Result<(bool, bool)> {
    let predicted = mde.in_precondition(env, &t.state, &t.action, params)?;
    Ok((predicted, t.deviation < params.d_max))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted_in: bool, actually_in: bool) {
        match (predicted_in, actually_in) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// `TP / (TP + FN)`, undefined without actually-in points.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `TN / (TN + FP)`, undefined without actually-out points.
    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion<E: Environment>(
    env: &E,
    mde: &Mde,
    cv: &EnvDataset<E>,
    params: &PreconditionParams,
) -> Result<Confusion> {
    let mut c = Confusion::default();
    for t in &cv.transitions {
        let (p, a) = classify_point(env, mde, t, params)?;
        c.add(p, a);
    }
    Ok(c)
}

pub fn confusion_rates<E: Environment>(
    env: &E,
    mde: &Mde,
    cv: &EnvDataset<E>,
    params: &PreconditionParams,
) -> Result<(Option<f64>, Option<f64>)> {
    let c = confusion(env, mde, cv, params)?;
    Ok((c.tpr(), c.tnr()))
}

/// Fixed test problems for a run seed, drawn from the evaluation stream.
pub fn test_problems<E: Environment>(env: &E, seed: u64, n: usize) -> Vec<Problem<E>> {
    (0..n as u64)
        .map(|k| env.sample_problem(&mut rng::stream(seed, rng::EVAL, &[k])))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    pub n_problems: usize,
    pub n_found: usize,
    pub n_success: usize,
}

impl PlanningMetrics {
    pub fn plan_found_rate(&self) -> f64 {
        self.n_found as f64 / self.n_problems as f64
    }

    /// Success among problems with a plan; undefined when none was found.
    pub fn goal_success_conditioned(&self) -> Option<f64> {
        ratio(self.n_success, self.n_found)
    }

    pub fn goal_success_overall(&self) -> f64 {
        self.n_success as f64 / self.n_problems as f64
    }
}

/// Plan each problem under the test precondition (or unconstrained when
/// `mde` is `None`), execute found plans open loop and check the goal on
/// the final observed state.
pub fn eval_planning<E: Environment>(
    env: &E,
    mde: Option<&Mde>,
    cfg: &EvalConfig,
    problems: &[Problem<E>],
    seed: u64,
) -> Result<PlanningMetrics> {
    let params = cfg.params()?;
    let planner = PlannerConfig {
        max_expansions: cfg.max_expansions,
        ..PlannerConfig::default()
    };
    let precondition = mde.map(|m| Precondition::new(env, m, params));
    let mut metrics = PlanningMetrics {
        n_problems: problems.len(),
        n_found: 0,
        n_success: 0,
    };
    for (k, problem) in problems.iter().enumerate() {
        let mut r = rng::stream(seed, "eval_planner", &[k as u64]);
        let Some(plan) = rrt_plan(env, precondition.as_ref(), problem, &planner, None, &mut r)? else {
            continue;
        };
        metrics.n_found += 1;
        let ex = execute_trajectory(env, &plan)?;
        let reached = ex
            .trajectory
            .executed_states
            .as_ref()
            .and_then(|s| s.last())
            .is_some_and(|s| env.goal_reached(&problem.goal, s));
        if reached && !ex.truncated {
            metrics.n_success += 1;
        }
    }
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub environment: String,
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub plan_found_rate: f64,
    pub goal_success_rate_conditioned: Option<f64>,
    pub goal_success_rate_overall: f64,
    pub n_cv_points: usize,
}

/// Evaluate one snapshot: planning metrics on the seed's fixed test
/// problems plus classification rates on `cv` when given.
#[allow(clippy::too_many_arguments)]
pub fn eval_snapshot<E: Environment>(
    env: &E,
    mde: Option<&Mde>,
    cfg: &EvalConfig,
    cv: Option<&EnvDataset<E>>,
    strategy: &str,
    seed: u64,
    iteration: usize,
) -> Result<MetricsRow> {
    cfg.validate()?;
    let problems = test_problems(env, seed, cfg.n_test_problems);
    let planning = eval_planning(env, mde, cfg, &problems, seed)?;
    let (tpr, tnr, n_cv) = match (mde, cv) {
        (Some(m), Some(cv)) if !cv.is_empty() => {
            let c = confusion(env, m, cv, &cfg.params()?)?;
            (c.tpr(), c.tnr(), c.total())
        }
        _ => (None, None, 0),
    };
    Ok(MetricsRow {
        environment: env.id().to_string(),
        strategy: strategy.to_string(),
        seed,
        iteration,
        tpr,
        tnr,
        plan_found_rate: planning.plan_found_rate(),
        goal_success_rate_conditioned: planning.goal_success_conditioned(),
        goal_success_rate_overall: planning.goal_success_overall(),
        n_cv_points: n_cv,
    })
}

/// Union of the other seeds' datasets, asserting none of `own` leaks in.
pub fn cross_seed_pool<E: Environment>(
    env: &E,
    own_seed: u64,
    datasets: &[(u64, &EnvDataset<E>)],
) -> Result<EnvDataset<E>> {
    let mut pool = crate::mde::MdeDataset::new(env);
    for (seed, ds) in datasets {
        if *seed != own_seed {
            pool.extend_from(ds)?;
        }
    }
    Ok(pool)
}

pub const METRICS_HEADER: [&str; 10] = [
    "environment",
    "strategy",
    "seed",
    "iteration",
    "tpr",
    "tnr",
    "plan_found_rate",
    "goal_success_rate_conditioned",
    "goal_success_rate_overall",
    "n_cv_points",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.environment.clone(),
            r.strategy.clone(),
            r.seed.to_string(),
            r.iteration.to_string(),
            fmt_opt(r.tpr),
            fmt_opt(r.tnr),
            r.plan_found_rate.to_string(),
            fmt_opt(r.goal_success_rate_conditioned),
            r.goal_success_rate_overall.to_string(),
            r.n_cv_points.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of the defined values; `None` fields when no
/// value (or, for the error, fewer than two values) is available.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let n = v.len();
    if n == 0 {
        return Summary {
            n,
            mean: None,
            stderr: None,
        };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let stderr = (n > 1).then(|| {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    });
    Summary {
        n,
        mean: Some(mean),
        stderr,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub environment: String,
    pub strategy: String,
    pub iteration: usize,
    pub n_seeds: usize,
    pub tpr: Summary,
    pub tnr: Summary,
    pub plan_found_rate: Summary,
    pub goal_success_rate_conditioned: Summary,
    pub goal_success_rate_overall: Summary,
    pub n_cv_points: Summary,
}

/// Per (environment, strategy, iteration) summaries across seeds.
pub fn aggregate_rows(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.environment.clone(), r.strategy.clone(), r.iteration))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((environment, strategy, iteration), g)| AggregateRow {
            environment,
            strategy,
            iteration,
            n_seeds: g.len(),
            tpr: summarize(g.iter().map(|r| r.tpr)),
            tnr: summarize(g.iter().map(|r| r.tnr)),
            plan_found_rate: summarize(g.iter().map(|r| Some(r.plan_found_rate))),
            goal_success_rate_conditioned: summarize(g.iter().map(|r| r.goal_success_rate_conditioned)),
            goal_success_rate_overall: summarize(g.iter().map(|r| Some(r.goal_success_rate_overall))),
            n_cv_points: summarize(g.iter().map(|r| Some(r.n_cv_points as f64))),
        })
        .collect()
}

const AGGREGATED: [&str; 6] = [
    "tpr",
    "tnr",
    "plan_found_rate",
    "goal_success_rate_conditioned",
    "goal_success_rate_overall",
    "n_cv_points",
];

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "environment".to_string(),
        "strategy".to_string(),
        "iteration".to_string(),
        "n_seeds".to_string(),
    ];
    for name in AGGREGATED {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_stderr"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.environment.clone(),
            r.strategy.clone(),
            r.iteration.to_string(),
            r.n_seeds.to_string(),
        ];
        for s in [
            r.tpr,
            r.tnr,
            r.plan_found_rate,
            r.goal_success_rate_conditioned,
            r.goal_success_rate_overall,
            r.n_cv_points,
        ] {
            rec.push(fmt_opt(s.mean));
            rec.push(fmt_opt(s.stderr));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
