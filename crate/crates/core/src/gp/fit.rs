//! Hyperparameter fitting by projected gradient ascent on the log marginal
//! likelihood.
//!
//! Hyperparameters live in log space as `[ln σ_f², ln ℓ_1 … ln ℓ_d, ln σ_n²]`.
//! Each restart alternates a kernel pass (signal variance and lengthscales)
//! with a noise pass, `rounds` times. A pass takes up to `steps_per_pass`
//! normalized-gradient steps with backtracking; every step is projected back
//! onto the box bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::GpDataset;
use super::hom::HomGpModel;
use super::kernel::{KernelParams, DEFAULT_LENGTHSCALE_BOUNDS};
use crate::error::{Error, Result};
use crate::rng;

/// Floor on squared CV residuals before taking logs.
pub const RESIDUAL_FLOOR: f64 = 1e-6;

const ARMIJO: f64 = 1e-4;
const INITIAL_STEP: f64 = 0.5;
const MAX_STEP: f64 = 2.0;
const MIN_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub rounds: usize,
    pub steps_per_pass: usize,
    pub cv_folds: usize,
    pub lengthscale_bounds: (f64, f64),
    pub signal_variance_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            rounds: 5,
            steps_per_pass: 3,
            cv_folds: 5,
            lengthscale_bounds: DEFAULT_LENGTHSCALE_BOUNDS,
            signal_variance_bounds: (1e-6, 1e4),
            noise_variance_bounds: (1e-6, 1e2),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        if !pos(self.lengthscale_bounds) || !pos(self.signal_variance_bounds) || !pos(self.noise_variance_bounds) {
            return Err(Error::invalid("bounds must satisfy 0 < lower <= upper"));
        }
        Ok(())
    }
}

/// Log-space hyperparameter vector plus the fixed pieces needed to rebuild a model.
#[derive(Clone, Debug)]
pub(crate) struct Hyper {
    pub theta: Vec<f64>,
}

impl Hyper {
    fn dim(&self) -> usize {
        self.theta.len() - 2
    }

    pub fn from_model(m: &HomGpModel) -> Self {
        let mut theta = vec![m.params().signal_variance.ln()];
        theta.extend(m.params().lengthscales.iter().map(|l| l.ln()));
        theta.push(m.noise_variance().ln());
        Self { theta }
    }

    fn params(&self, cfg: &FitConfig) -> KernelParams {
        let d = self.dim();
        let mut p = KernelParams {
            signal_variance: self.theta[0].exp(),
            lengthscales: self.theta[1..=d].iter().map(|t| t.exp()).collect(),
            lengthscale_bounds: cfg.lengthscale_bounds,
        };
        p.clip_lengthscales();
        p
    }

    fn noise(&self) -> f64 {
        self.theta[self.dim() + 1].exp()
    }
}

fn log_bounds(cfg: &FitConfig, dim: usize) -> Vec<(f64, f64)> {
    let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
    let mut b = vec![ln(cfg.signal_variance_bounds)];
    b.extend(std::iter::repeat_n(ln(cfg.lengthscale_bounds), dim));
    b.push(ln(cfg.noise_variance_bounds));
    b
}

fn project(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(*lo, *hi);
    }
}

/// One restart's optimization state.
pub(crate) struct Ascent<'a> {
    dataset: &'a GpDataset,
    cfg: &'a FitConfig,
    offset: f64,
    bounds: Vec<(f64, f64)>,
    pub hyper: Hyper,
    pub model: HomGpModel,
    step: f64,
}

impl<'a> Ascent<'a> {
    pub fn start(dataset: &'a GpDataset, cfg: &'a FitConfig, offset: f64, mut hyper: Hyper) -> Result<Self> {
        let bounds = log_bounds(cfg, hyper.dim());
        project(&mut hyper.theta, &bounds);
        let model = build(dataset, &hyper, cfg, offset)?;
        Ok(Self {
            dataset,
            cfg,
            offset,
            bounds,
            hyper,
            model,
            step: INITIAL_STEP,
        })
    }

    pub fn lml(&self) -> f64 {
        self.model.log_marginal_likelihood()
    }

    /// Take up to `steps` ascent steps over the coordinates in `free`.
    pub fn pass(&mut self, free: &[usize], steps: usize) {
        for _ in 0..steps {
            let full = self.model.lml_gradient();
            let g: Vec<f64> = free.iter().map(|&i| full[i]).collect();
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !gnorm.is_finite() || gnorm < 1e-10 {
                return;
            }
            let f0 = self.lml();
            let mut accepted = false;
            while self.step >= MIN_STEP {
                let mut cand = self.hyper.clone();
                for (k, &i) in free.iter().enumerate() {
                    cand.theta[i] += self.step * g[k] / gnorm;
                }
                project(&mut cand.theta, &self.bounds);
                let moved: f64 = free
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| g[k] * (cand.theta[i] - self.hyper.theta[i]))
                    .sum();
                if moved <= 0.0 {
                    // Pinned against the bounds in the ascent direction.
                    return;
                }
                if let Ok(m) = build(self.dataset, &cand, self.cfg, self.offset) {
                    let f1 = m.log_marginal_likelihood();
                    if f1.is_finite() && f1 >= f0 + ARMIJO * moved {
                        self.hyper = cand;
                        self.model = m;
                        self.step = (self.step * 2.0).min(MAX_STEP);
                        accepted = true;
                        break;
                    }
                }
                self.step *= 0.5;
            }
            if !accepted {
                self.step = INITIAL_STEP;
                return;
            }
        }
    }
}

fn build(dataset: &GpDataset, hyper: &Hyper, cfg: &FitConfig, offset: f64) -> Result<HomGpModel> {
    HomGpModel::new(dataset.clone(), hyper.params(cfg), hyper.noise(), offset)
}

pub(crate) fn kernel_coords(dim: usize) -> Vec<usize> {
    (0..=dim).collect()
}

pub(crate) fn noise_coord(dim: usize) -> Vec<usize> {
    vec![dim + 1]
}

fn initial_hyper(dataset: &GpDataset, cfg: &FitConfig, offset: f64, restart: usize, seed: u64) -> Hyper {
    let d = dataset.dim().unwrap_or(0);
    let n = dataset.len().max(1) as f64;
    let var = (dataset.targets.iter().map(|y| (y - offset).powi(2)).sum::<f64>() / n).max(1e-4);
    let (llo, lhi) = cfg.lengthscale_bounds;
    let mut theta = Vec::with_capacity(d + 2);
    if restart == 0 {
        theta.push(var.ln());
        for k in 0..d {
            let (lo, hi) = dataset
                .inputs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                    (a.min(x[k]), b.max(x[k]))
                });
            let range = hi - lo;
            let l = if range > 0.0 { 0.5 * range } else { 1.0 };
            theta.push(l.clamp(llo, lhi).ln());
        }
        theta.push((0.1 * var).ln());
    } else {
        let mut rng = rng::stream(seed, "gp_restart", &[restart as u64]);
        theta.push(var.ln() + rng.random_range(-1.0..1.0));
        for _ in 0..d {
            theta.push(rng.random_range(llo.ln()..=lhi.ln()));
        }
        theta.push(var.ln() + rng.random_range(-3.0..0.0) * std::f64::consts::LN_10);
    }
    Hyper { theta }
}

/// Multi-start alternating ascent; returns the best restart.
pub(crate) fn fit_with_offset(
    dataset: &GpDataset,
    cfg: &FitConfig,
    seed: u64,
    offset: f64,
    rounds: usize,
) -> Result<HomGpModel> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: dataset.len(),
        });
    }
    let d = dataset.dim().unwrap_or(0);
    let fixed_noise = dataset.per_point_noise_variance.is_some();
    let kernel = kernel_coords(d);
    let noise = noise_coord(d);

    let mut best: Option<HomGpModel> = None;
    let mut last_err = None;
    for restart in 0..cfg.restarts {
        let init = initial_hyper(dataset, cfg, offset, restart, seed);
        let mut ascent = match Ascent::start(dataset, cfg, offset, init) {
            Ok(a) => a,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        for _ in 0..rounds {
            ascent.pass(&kernel, cfg.steps_per_pass);
            if !fixed_noise {
                ascent.pass(&noise, cfg.steps_per_pass);
            }
        }
        let better = best.as_ref().is_none_or(|b| ascent.lml() > b.log_marginal_likelihood());
        if better {
            best = Some(ascent.model);
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Numerical("no restart succeeded".into())))
}

/// Fit a zero-mean homoscedastic GP by maximizing the log marginal likelihood.
pub fn fit_homoscedastic(dataset: &GpDataset, cfg: &FitConfig, seed: u64) -> Result<HomGpModel> {
    fit_with_offset(dataset, cfg, seed, 0.0, cfg.rounds)
}

/// Log squared held-out residuals, one per point, for training the noise GP.
///
/// Hyperparameters are fitted once on the full dataset; each fold is then
/// predicted by a GP with those hyperparameters conditioned on the remaining
/// folds. Fold membership is a seeded shuffle.
pub fn cv_noise_targets(dataset: &GpDataset, folds: usize, cfg: &FitConfig, seed: u64) -> Result<Vec<f64>> {
    let n = dataset.len();
    if folds < 2 || n < folds {
        return Err(Error::invalid(format!(
            "cross-validation needs n >= folds >= 2 (n = {n}, folds = {folds})"
        )));
    }
    let base = dataset.without_noise();
    let global = fit_homoscedastic(&base, cfg, rng::derive_seed(seed, "cv_fit", &[]))?;

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, "cv_folds", &[]));
    }
    let mut fold_of = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }

    let mut targets = vec![0.0; n];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let model = HomGpModel::new(
            base.select(&train),
            global.params().clone(),
            global.noise_variance(),
            global.mean_offset(),
        )?;
        for i in (0..n).filter(|&i| fold_of[i] == f) {
            let (mu, _) = model.predict(&base.inputs[i])?;
            let r2 = (base.targets[i] - mu).powi(2);
            targets[i] = r2.max(RESIDUAL_FLOOR).ln();
        }
    }
    Ok(targets)
}
