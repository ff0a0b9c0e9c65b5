//! Python bindings for the `precond` library.
//!
//! Structured results (records, metric rows, manifests) cross the boundary
//! as JSON and arrive in Python as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileExistsError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use precond::acquisition::{beta_schedule as schedule, ScheduleConfig};
use precond::config::{RunConfig, SuiteConfig};
use precond::env::{Cell, Environment, GridWorld, GridWorldConfig, Move};
use precond::error::Error;
use precond::evaluation::EvalConfig;
use precond::experiment::{eval_run, run_experiment};
use precond::gp::{fit_heteroscedastic, fit_homoscedastic, FitConfig, GpDataset, HeteroGpModel, HomGpModel};
use precond::mde::{self, Mde, PreconditionParams};
use precond::rundir::{train_run, RunDir};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::InsufficientData { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Exists(_) => PyFileExistsError::new_err(e.to_string()),
        Error::Io(_) | Error::Corrupt { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parse a JSON string in Python so callers receive native objects.
fn loads(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn fit_config(json: Option<&str>) -> PyResult<FitConfig> {
    json.map_or(Ok(FitConfig::default()), |s| serde_json::from_str(s).map_err(json_err))
}

/// Exact GP with a Matérn-5/2 ARD kernel and fitted homoscedastic noise.
#[pyclass(name = "HomGP", frozen)]
struct PyHomGp {
    inner: HomGpModel,
}

#[pymethods]
impl PyHomGp {
    /// Fit hyperparameters by maximizing the log marginal likelihood.
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, seed=0, fit_config=None))]
    fn fit(
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        seed: u64,
        fit_config: Option<&str>,
    ) -> PyResult<Self> {
        let cfg = self::fit_config(fit_config)?;
        let data = GpDataset::new(inputs, targets).map_err(to_py)?;
        let inner = py.detach(|| fit_homoscedastic(&data, &cfg, seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Posterior mean and latent variance at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict(&x).map_err(to_py)
    }

    fn log_marginal_likelihood(&self) -> f64 {
        self.inner.log_marginal_likelihood()
    }

    /// Gradient in log-hyperparameters: signal variance, lengthscales, noise.
    fn lml_gradient(&self) -> Vec<f64> {
        self.inner.lml_gradient()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    #[getter]
    fn signal_variance(&self) -> f64 {
        self.inner.params().signal_variance
    }

    #[getter]
    fn lengthscales(&self) -> Vec<f64> {
        self.inner.params().lengthscales.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Heteroscedastic GP: a mean GP with per-point noise from a log-noise GP.
#[pyclass(name = "HeteroGP", frozen)]
struct PyHeteroGp {
    inner: HeteroGpModel,
}

#[pymethods]
impl PyHeteroGp {
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, seed=0, fit_config=None))]
    fn fit(
        py: Python<'_>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        seed: u64,
        fit_config: Option<&str>,
    ) -> PyResult<Self> {
        let cfg = self::fit_config(fit_config)?;
        let data = GpDataset::new(inputs, targets).map_err(to_py)?;
        let inner = py.detach(|| fit_heteroscedastic(&data, &cfg, seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Posterior mean and latent variance of the mean function at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict(&x).map_err(to_py)
    }

    /// Predicted observation noise variance at `x`.
    fn noise_variance(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.noise_variance_at(&x).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn parse_move(name: &str) -> PyResult<Move> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown move {name:?}; expected up, down, left or right")))
}

/// Icy gridworld with true dynamics and the slip-free model.
#[pyclass(name = "GridWorld", frozen)]
struct PyGridWorld {
    inner: GridWorld,
}

#[pymethods]
impl PyGridWorld {
    /// Build from a JSON gridworld config; the default map when omitted.
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg: GridWorldConfig = match config {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => GridWorldConfig::default(),
        };
        Ok(Self {
            inner: GridWorld::from_config(&cfg).map_err(to_py)?,
        })
    }

    #[getter]
    fn width(&self) -> i32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> i32 {
        self.inner.height()
    }

    fn ice(&self) -> Vec<(i32, i32)> {
        self.inner.ice().iter().map(|c| (c.x, c.y)).collect()
    }

    fn free_cells(&self) -> Vec<(i32, i32)> {
        self.inner.free_cells().iter().map(|c| (c.x, c.y)).collect()
    }

    fn true_step(&self, x: i32, y: i32, action: &str) -> PyResult<(i32, i32)> {
        let c = self.inner.true_step(Cell::new(x, y), parse_move(action)?);
        Ok((c.x, c.y))
    }

    fn model_step(&self, x: i32, y: i32, action: &str) -> PyResult<(i32, i32)> {
        let c = self.inner.model_step(Cell::new(x, y), parse_move(action)?);
        Ok((c.x, c.y))
    }

    /// Distance between true and predicted next states.
    fn deviation(&self, x: i32, y: i32, action: &str) -> PyResult<f64> {
        let (s, a) = (Cell::new(x, y), parse_move(action)?);
        Ok(self
            .inner
            .distance(&self.inner.true_step(s, a), &self.inner.model_step(s, a)))
    }

    fn features(&self, x: i32, y: i32, action: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.features(&Cell::new(x, y), &parse_move(action)?))
    }
}

/// A saved model deviation estimator.
#[pyclass(name = "Mde", frozen)]
struct PyMde {
    inner: Mde,
}

#[pymethods]
impl PyMde {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Mde::load(&path).map_err(to_py)?,
        })
    }

    /// Predicted deviation mean and standard deviation for a feature vector.
    fn predict(&self, features: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.predict_features(&features).map_err(to_py)
    }

    /// Whether `μ + βσ < d_max` at a feature vector.
    fn admits(&self, features: Vec<f64>, d_max: f64, beta: f64) -> PyResult<bool> {
        let params = PreconditionParams::new(d_max, beta).map_err(to_py)?;
        let (mu, sigma) = self.inner.predict_features(&features).map_err(to_py)?;
        Ok(params.admits(mu, sigma))
    }

    #[getter]
    fn featurizer(&self) -> &str {
        self.inner.featurizer()
    }

    #[getter]
    fn n_train(&self) -> usize {
        self.inner.n_train()
    }
}

/// Training run directory opened for reading.
#[pyclass(name = "Run", frozen)]
struct PyRun {
    inner: RunDir,
}

#[pymethods]
impl PyRun {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunDir::open(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn completed(&self) -> usize {
        self.inner.completed()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn manifest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        loads(py, &serde_json::to_string(&self.inner.manifest).map_err(json_err)?)
    }

    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        loads(py, &serde_json::to_string(&self.inner.config).map_err(json_err)?)
    }

    /// Estimator after `completed` iterations; 0 is the prior.
    fn snapshot(&self, completed: usize) -> PyResult<PyMde> {
        Ok(PyMde {
            inner: self.inner.load_snapshot(completed).map_err(to_py)?,
        })
    }

    /// Evaluate snapshots and return one dict per iteration.
    #[pyo3(signature = (iterations=None, eval_config=None, cv_runs=Vec::new()))]
    fn evaluate(
        &self,
        py: Python<'_>,
        iterations: Option<Vec<usize>>,
        eval_config: Option<&str>,
        cv_runs: Vec<PathBuf>,
    ) -> PyResult<Py<PyAny>> {
        let eval: EvalConfig = match eval_config {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => EvalConfig {
                d_max: self.inner.config.learning.d_max,
                ..EvalConfig::default()
            },
        };
        let iterations = iterations.unwrap_or_else(|| (1..=self.inner.completed()).collect());
        let cv = cv_runs
            .iter()
            .map(|p| RunDir::open(p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let rows = py
            .detach(|| eval_run(&self.inner, &eval, &iterations, &cv))
            .map_err(to_py)?;
        loads(py, &serde_json::to_string(&rows).map_err(json_err)?)
    }
}

/// Quantile multiplier `Φ⁻¹(1 − δ)`.
#[pyfunction]
fn beta_from_delta(delta: f64) -> PyResult<f64> {
    mde::beta_from_delta(delta).map_err(to_py)
}

/// Risk-tolerance schedule value at iteration `j` of `total`.
#[pyfunction]
fn beta_schedule(j: usize, total: usize) -> f64 {
    schedule(j, &ScheduleConfig::new(total))
}

/// Validate a run config given as JSON and return it with defaults filled.
#[pyfunction]
fn load_run_config(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_slice(config.as_bytes()).map_err(to_py)?;
    loads(py, &serde_json::to_string(&cfg).map_err(json_err)?)
}

/// Run the learning loop from a JSON config into `out`.
#[pyfunction]
#[pyo3(signature = (config, out, force=false))]
fn train(py: Python<'_>, config: &str, out: PathBuf, force: bool) -> PyResult<PyRun> {
    py.detach(|| train_run(&out, config.as_bytes(), force)).map_err(to_py)?;
    PyRun::new(out)
}

/// Train and evaluate every cell of a JSON suite; returns the metric rows.
#[pyfunction]
#[pyo3(signature = (config, out, force=false, jobs=None))]
fn run_suite(py: Python<'_>, config: &str, out: PathBuf, force: bool, jobs: Option<usize>) -> PyResult<Py<PyAny>> {
    let mut suite = SuiteConfig::from_slice(config.as_bytes()).map_err(to_py)?;
    if let Some(j) = jobs {
        suite.jobs = j;
    }
    let result = py.detach(|| run_experiment(&suite, &out, force)).map_err(to_py)?;
    let json = serde_json::json!({ "metrics": result.metrics, "failures": result.failures });
    loads(py, &json.to_string())
}

#[pymodule]
fn precond_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHomGp>()?;
    m.add_class::<PyHeteroGp>()?;
    m.add_class::<PyGridWorld>()?;
    m.add_class::<PyMde>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(beta_from_delta, m)?)?;
    m.add_function(wrap_pyfunction!(beta_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(load_run_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
