//! Command implementations behind the `precond` binary.
//!
//! Exit codes: 0 success, 1 numerical or I/O failure, 2 invalid
//! configuration or arguments, 3 output already exists, 4 corrupt input.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse, RunConfig, SuiteConfig};
use crate::error::{Error, Result};
use crate::evaluation::{write_metrics_csv, EvalConfig};
use crate::experiment::{eval_run, run_experiment};
use crate::export::{export_slice, write_slice_csv, SliceSpec};
use crate::mde::PreconditionParams;
use crate::rundir::{train_run, write_atomic, RunDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EXISTS: i32 = 3;
pub const EXIT_CORRUPT: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Exists(_) => EXIT_EXISTS,
        Error::Corrupt { .. } => EXIT_CORRUPT,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "precond", version, about = "Active learning of model preconditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the active-learning loop and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run's snapshots and write a metrics CSV.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a suite.
    Suite(SuiteArgs),
    /// Write μ, σ and the precondition over a 2-D slice of one snapshot.
    ExportPrecondGrid(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of iterations `J`.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Evaluation settings as JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated iterations (default: 1..=J).
    #[arg(long, value_delimiter = ',')]
    pub iterations: Option<Vec<usize>>,
    /// Runs with other seeds whose data scores the classification rates.
    #[arg(long)]
    pub cv: Vec<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output CSV (default: <run>/eval/metrics.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Override the worker count.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Snapshot after this many iterations (0 is the prior).
    #[arg(long)]
    pub iteration: usize,
    /// Two swept coordinates, e.g. `x,y` or `y,z`.
    #[arg(long, value_delimiter = ',', default_value = "x,y")]
    pub slice: Vec<String>,
    #[arg(long)]
    pub action: Option<String>,
    /// Fixed coordinates as `name=value`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<String>,
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Defaults to the run's `d_max`.
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Suite(a) => cmd_suite(&a),
        Command::ExportPrecondGrid(a) => cmd_export_precond_grid(&a),
    }
}

fn read_input(path: &Path, field: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::config(field, format!("{}: {e}", path.display())))
}

/// Refuse to replace an existing file unless forced.
fn check_output_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut bytes = read_input(&a.config, "config")?;
    if a.seed.is_some() || a.iterations.is_some() {
        let mut cfg = RunConfig::from_slice(&bytes)?;
        if let Some(s) = a.seed {
            cfg.learning.seed = s;
        }
        if let Some(j) = a.iterations {
            cfg.learning.iterations = j;
        }
        bytes = serde_json::to_vec_pretty(&cfg)?;
    }
    let m = train_run(&a.out, &bytes, a.force)?;
    eprintln!("wrote {} iterations to {}", m.completed_iterations, a.out.display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let run = RunDir::open(&a.run)?;
    let mut eval: EvalConfig = match &a.config {
        Some(p) => parse(&read_input(p, "config")?)?,
        None => EvalConfig {
            d_max: run.config.learning.d_max,
            ..EvalConfig::default()
        },
    };
    if let Some(b) = a.beta {
        eval.beta_test = b;
    }
    let iterations = a.iterations.clone().unwrap_or_else(|| (1..=run.completed()).collect());
    let cv = a.cv.iter().map(|p| RunDir::open(p)).collect::<Result<Vec<_>>>()?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval").join("metrics.csv"));
    check_output_file(&out, a.force)?;
    let rows = eval_run(&run, &eval, &iterations, &cv)?;
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows)?;
    write_atomic(&out, &buf)?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

pub fn cmd_suite(a: &SuiteArgs) -> Result<()> {
    let mut suite = SuiteConfig::from_slice(&read_input(&a.config, "config")?)?;
    if let Some(j) = a.jobs {
        suite.jobs = j;
    }
    let out = run_experiment(&suite, &a.out, a.force)?;
    eprintln!(
        "{} metric rows, {} aggregate rows, {} failed cells in {}",
        out.metrics.len(),
        out.aggregate.len(),
        out.failures.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_export_precond_grid(a: &ExportArgs) -> Result<()> {
    let run = RunDir::open(&a.run)?;
    let mut at = BTreeMap::new();
    for kv in &a.at {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config("at", format!("expected name=value, got {kv:?}")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Error::config("at", format!("{v:?} is not a number")))?;
        at.insert(k.to_string(), v);
    }
    let [u, v] = <[String; 2]>::try_from(a.slice.clone())
        .map_err(|_| Error::config("slice", "expected exactly two coordinates"))?;
    let params = PreconditionParams::new(a.d_max.unwrap_or(run.config.learning.d_max), a.beta)
        .map_err(|e| Error::config("beta", e.to_string()))?;
    let spec = SliceSpec {
        dims: (u, v),
        action: a.action.clone(),
        at,
        resolution: a.resolution,
        params,
    };
    check_output_file(&a.out, a.force)?;
    let mde = run.load_snapshot(a.iteration)?;
    let rows = export_slice(&run.config.environment, &mde, &spec)?;
    let mut buf = Vec::new();
    write_slice_csv(&mut buf, &spec, &rows)?;
    write_atomic(&a.out, &buf)?;
    eprintln!("wrote {} grid points to {}", rows.len(), a.out.display());
    Ok(())
}
