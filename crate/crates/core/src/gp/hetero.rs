//! Heteroscedastic GP: a zero-mean GP for the signal whose per-point noise
//! comes from a second GP fitted to log squared cross-validation residuals.

use serde::{Deserialize, Serialize};

use super::dataset::GpDataset;
use super::fit::{cv_noise_targets, fit_with_offset, kernel_coords, noise_coord, Ascent, FitConfig, Hyper};
use super::hom::HomGpModel;
use super::kernel::KernelParams;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeteroGpModel {
    mean_gp: HomGpModel,
    /// Models `ln σ²(x)`; its constant prior mean is the average noise target.
    noise_gp: HomGpModel,
    prior_mean: f64,
}

impl HeteroGpModel {
    /// An untrained model: `(0, sqrt(signal_variance + noise_variance))` everywhere.
    pub fn prior(params: KernelParams, noise_variance: f64) -> Result<Self> {
        let dim = params.dim();
        let mean_gp = HomGpModel::new(GpDataset::default(), params, noise_variance, 0.0)?;
        let noise_gp = HomGpModel::new(
            GpDataset::default(),
            KernelParams::isotropic(dim, 1.0, 1.0),
            1.0,
            noise_variance.ln(),
        )?;
        Ok(Self {
            mean_gp,
            noise_gp,
            prior_mean: 0.0,
        })
    }

    /// Condition the prior on `dataset` without optimizing anything; the
    /// noise GP stays at its prior.
    pub fn conditioned(dataset: &GpDataset, params: KernelParams, noise_variance: f64) -> Result<Self> {
        let mut m = Self::prior(params.clone(), noise_variance)?;
        m.mean_gp = HomGpModel::new(dataset.without_noise(), params, noise_variance, 0.0)?;
        Ok(m)
    }

    pub fn mean_gp(&self) -> &HomGpModel {
        &self.mean_gp
    }

    pub fn noise_gp(&self) -> &HomGpModel {
        &self.noise_gp
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn dim(&self) -> usize {
        self.mean_gp.dim()
    }

    pub fn len(&self) -> usize {
        self.mean_gp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_gp.is_empty()
    }

    /// Log squared residual targets the noise GP was trained on.
    pub fn noise_targets(&self) -> &[f64] {
        &self.noise_gp.dataset().targets
    }

    /// Predicted observation-noise variance at `x`.
    pub fn noise_variance_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.noise_gp.predict(x)?.0.exp())
    }

    /// Mean and total predictive standard deviation (latent + noise).
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (mu, latent) = self.mean_gp.predict(x)?;
        let noise = self.noise_variance_at(x)?;
        Ok((mu, (latent + noise).sqrt()))
    }
}

fn noise_at_inputs(noise_gp: &HomGpModel, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    inputs.iter().map(|x| Ok(noise_gp.predict(x)?.0.exp())).collect()
}

/// Fit the noise GP on cross-validated residuals, then the signal GP with
/// the implied per-point noise, alternating `cfg.rounds` ascent passes.
///
/// Cross-validation residuals are extracted once; later rounds continue
/// optimizing both GPs from their previous hyperparameters.
pub fn fit_heteroscedastic(dataset: &GpDataset, cfg: &FitConfig, seed: u64) -> Result<HeteroGpModel> {
    cfg.validate()?;
    let n = dataset.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let base = dataset.without_noise();
    let dim = base.dim().unwrap_or(0);
    let folds = cfg.cv_folds.min(n);

    let targets = cv_noise_targets(&base, folds, cfg, rng::derive_seed(seed, "cv", &[]))?;
    let offset = targets.iter().sum::<f64>() / n as f64;
    let noise_ds = GpDataset::new(base.inputs.clone(), targets)?;

    let mut noise_gp = fit_with_offset(&noise_ds, cfg, rng::derive_seed(seed, "noise_gp", &[]), offset, 1)?;
    let mut mean_ds = base.clone().with_noise(noise_at_inputs(&noise_gp, &base.inputs)?)?;
    let mut mean_gp = fit_with_offset(&mean_ds, cfg, rng::derive_seed(seed, "mean_gp", &[]), 0.0, 1)?;

    for _ in 1..cfg.rounds {
        let mut a = Ascent::start(&noise_ds, cfg, offset, Hyper::from_model(&noise_gp))?;
        a.pass(&kernel_coords(dim), cfg.steps_per_pass);
        a.pass(&noise_coord(dim), cfg.steps_per_pass);
        noise_gp = a.model;

        mean_ds = base.clone().with_noise(noise_at_inputs(&noise_gp, &base.inputs)?)?;
        let mut b = Ascent::start(&mean_ds, cfg, 0.0, Hyper::from_model(&mean_gp))?;
        b.pass(&kernel_coords(dim), cfg.steps_per_pass);
        mean_gp = b.model;
    }

    Ok(HeteroGpModel {
        mean_gp,
        noise_gp,
        prior_mean: 0.0,
    })
}
