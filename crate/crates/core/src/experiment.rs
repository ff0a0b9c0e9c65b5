//! Evaluating run directories and running full experiment suites.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{SuiteConfig, SCHEMA_VERSION};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_rows, cross_seed_pool, eval_snapshot, write_aggregate_csv, write_metrics_csv, AggregateRow, EvalConfig,
    MetricsRow,
};
use crate::learning::Strategy;
use crate::rundir::{prepare_output, train_run, write_atomic, RunDir};
use crate::with_env;

/// Evaluate the snapshots of `run` after each of `iterations`.
///
/// Classification rates use the final datasets of `cv_runs`, skipping any
/// run that shares this run's seed.
pub fn eval_run(run: &RunDir, eval: &EvalConfig, iterations: &[usize], cv_runs: &[RunDir]) -> Result<Vec<MetricsRow>> {
    eval.validate()?;
    for cv in cv_runs {
        if cv.config.environment != run.config.environment {
            return Err(Error::config(
                "cv",
                format!("{} was trained on a different environment", cv.path.display()),
            ));
        }
    }
    with_env!(&run.config.environment, |env| eval_with(
        &env, run, eval, iterations, cv_runs
    ))
}

fn eval_with<E: Environment>(
    env: &E,
    run: &RunDir,
    eval: &EvalConfig,
    iterations: &[usize],
    cv_runs: &[RunDir],
) -> Result<Vec<MetricsRow>> {
    let datasets = cv_runs
        .iter()
        .map(|r| Ok((r.seed(), r.load_dataset(env)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = datasets.iter().map(|(s, d)| (*s, d)).collect();
    let pool = cross_seed_pool(env, run.seed(), &refs)?;
    let strategy = run.config.learning.strategy.as_str();
    iterations
        .iter()
        .map(|&k| {
            let mde = run.load_snapshot(k)?;
            eval_snapshot(env, Some(&mde), eval, Some(&pool), strategy, run.seed(), k)
        })
        .collect()
}

/// Apply `f` to every item on at most `jobs` threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub environment: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct SuiteOutput {
    pub metrics: Vec<MetricsRow>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
}

pub const SUITE_FILE: &str = "suite.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Clone, Debug)]
struct Cell {
    env: usize,
    label: String,
    strategy: Strategy,
    seed: u64,
    dir: PathBuf,
}

/// Directory and CSV label for each environment: its id, suffixed with
/// the position when several entries share an id.
fn env_labels(suite: &SuiteConfig) -> Vec<String> {
    let ids: Vec<_> = suite.environments.iter().map(|e| e.id()).collect();
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            if ids.iter().filter(|o| *o == id).count() > 1 {
                format!("{id}_{i}")
            } else {
                id.to_string()
            }
        })
        .collect()
}

/// Train and evaluate every environment × strategy × seed cell under `out`.
///
/// A cell that fails is logged, listed in `failures.json` and left out of
/// the tables; the suite itself still succeeds.
pub fn run_experiment(suite: &SuiteConfig, out: &Path, force: bool) -> Result<SuiteOutput> {
    suite.validate()?;
    prepare_output(
        out,
        force,
        &[SUITE_FILE, METRICS_FILE, AGGREGATE_FILE, FAILURES_FILE, RUNS_DIR],
    )?;
    fs::write(out.join(SUITE_FILE), serde_json::to_vec_pretty(suite)?)?;

    let labels = env_labels(suite);
    let mut cells = Vec::new();
    for (e, label) in labels.iter().enumerate() {
        for &strategy in &suite.strategies {
            for &seed in &suite.seeds {
                cells.push(Cell {
                    env: e,
                    label: label.clone(),
                    strategy,
                    seed,
                    dir: out
                        .join(RUNS_DIR)
                        .join(label)
                        .join(strategy.as_str())
                        .join(format!("seed_{seed}")),
                });
            }
        }
    }

    let trained = parallel_map(&cells, suite.jobs, |c| {
        info!("training {} / {} / seed {}", c.label, c.strategy, c.seed);
        let bytes = serde_json::to_vec_pretty(&suite.cell(c.env, c.strategy, c.seed))?;
        train_run(&c.dir, &bytes, false)?;
        RunDir::open(&c.dir)
    });

    let mut failures = Vec::new();
    let fail = |c: &Cell, stage: &str, e: &Error| {
        warn!(
            "{} / {} / seed {} failed during {stage}: {e}",
            c.label, c.strategy, c.seed
        );
        CellFailure {
            environment: c.label.clone(),
            strategy: c.strategy,
            seed: c.seed,
            stage: stage.to_string(),
            message: e.to_string(),
        }
    };
    let mut runs: Vec<Option<RunDir>> = Vec::with_capacity(cells.len());
    for (c, r) in cells.iter().zip(trained) {
        match r {
            Ok(run) => runs.push(Some(run)),
            Err(e) => {
                failures.push(fail(c, "train", &e));
                runs.push(None);
            }
        }
    }

    let iterations: Vec<usize> = (1..=suite.learning.iterations).collect();
    let jobs: Vec<usize> = (0..cells.len()).filter(|&i| runs[i].is_some()).collect();
    let evaluated = parallel_map(&jobs, suite.jobs, |&i| {
        let c = &cells[i];
        let run = runs[i].as_ref().expect("filtered to trained cells");
        let peers: Vec<RunDir> = cells
            .iter()
            .zip(&runs)
            .filter(|(o, r)| o.env == c.env && o.strategy == c.strategy && o.seed != c.seed && r.is_some())
            .filter_map(|(_, r)| r.clone())
            .collect();
        info!("evaluating {} / {} / seed {}", c.label, c.strategy, c.seed);
        eval_run(run, &suite.eval, &iterations, &peers)
    });

    let mut metrics = Vec::new();
    for (&i, r) in jobs.iter().zip(evaluated) {
        match r {
            Ok(rows) => metrics.extend(rows.into_iter().map(|mut row| {
                row.environment = cells[i].label.clone();
                row
            })),
            Err(e) => failures.push(fail(&cells[i], "eval", &e)),
        }
    }
    let aggregate = aggregate_rows(&metrics);

    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &metrics)?;
    write_atomic(&out.join(METRICS_FILE), &buf)?;
    let mut buf = Vec::new();
    write_aggregate_csv(&mut buf, &aggregate)?;
    write_atomic(&out.join(AGGREGATE_FILE), &buf)?;
    let report = serde_json::json!({ "schema_version": SCHEMA_VERSION, "failures": failures });
    write_atomic(&out.join(FAILURES_FILE), &serde_json::to_vec_pretty(&report)?)?;

    Ok(SuiteOutput {
        metrics,
        aggregate,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..37).collect();
        for jobs in [1, 3, 64] {
            let out = parallel_map(&items, jobs, |x| x * 2);
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(parallel_map(&[] as &[u32], 4, |x| *x).is_empty());
    }
}
