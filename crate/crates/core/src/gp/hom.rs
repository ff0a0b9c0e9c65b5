//! Exact GP posterior with a fixed Matérn-5/2 kernel.
//!
//! The covariance is `K + D` where `D` is either `σ²I` or the dataset's
//! per-point noise variances. Factorization uses the jitter schedule
//! `0, 1e-8, 1e-6, 1e-4` before giving up.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::dataset::GpDataset;
use super::kernel::{matern52_of_distance, scaled_distance, KernelParams, SQRT5};
use crate::error::{Error, Result};

pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HomGpSnapshot {
    dataset: GpDataset,
    params: KernelParams,
    noise_variance: f64,
    #[serde(default)]
    mean_offset: f64,
}

#[derive(Clone, Debug)]
pub struct HomGpModel {
    dataset: GpDataset,
    params: KernelParams,
    noise_variance: f64,
    mean_offset: f64,
    jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl HomGpModel {
    /// Condition a GP with the given hyperparameters on `dataset`.
    ///
    /// `mean_offset` is a constant prior mean; the deviation GP always uses 0.
    pub fn new(dataset: GpDataset, params: KernelParams, noise_variance: f64, mean_offset: f64) -> Result<Self> {
        dataset.validate()?;
        params.validate()?;
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid("noise_variance must be positive"));
        }
        if let Some(d) = dataset.dim() {
            if d != params.dim() {
                return Err(Error::invalid(format!(
                    "dataset has dimension {d}, kernel has {}",
                    params.dim()
                )));
            }
        }
        if dataset.targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("targets must be finite"));
        }

        let n = dataset.len();
        if n == 0 {
            return Ok(Self {
                dataset,
                params,
                noise_variance,
                mean_offset,
                jitter: 0.0,
                chol: None,
                alpha: DVector::zeros(0),
            });
        }

        let cov = covariance(&dataset, &params, noise_variance);
        let (chol, jitter) = factorize(cov)?;
        let centered = DVector::from_iterator(n, dataset.targets.iter().map(|y| y - mean_offset));
        let alpha = chol.solve(&centered);
        Ok(Self {
            dataset,
            params,
            noise_variance,
            mean_offset,
            jitter,
            chol: Some(chol),
            alpha,
        })
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    /// Diagonal jitter that was needed to factorize, 0 when none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Lower Cholesky factor of the training covariance, empty when n = 0.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.l(),
            None => DMatrix::zeros(0, 0),
        }
    }

    /// Training covariance `K + D` (without jitter).
    pub fn training_covariance(&self) -> DMatrix<f64> {
        covariance(&self.dataset, &self.params, self.noise_variance)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Posterior mean and latent (noise-free) variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let Some(chol) = &self.chol else {
            return Ok((self.mean_offset, self.params.signal_variance));
        };
        let kstar = DVector::from_iterator(
            self.len(),
            self.dataset.inputs.iter().map(|xi| {
                let r = scaled_distance(x, xi, &self.params.lengthscales);
                matern52_of_distance(r, self.params.signal_variance)
            }),
        );
        let mu = self.mean_offset + kstar.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let var = (self.params.signal_variance - v.norm_squared()).max(0.0);
        Ok((mu, var))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let n = self.len() as f64;
        let data_fit: f64 = self
            .dataset
            .targets
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| (y - self.mean_offset) * a)
            .sum();
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * data_fit - log_det_half - 0.5 * n * (2.0 * PI).ln()
    }

    /// Gradient of the log marginal likelihood with respect to
    /// `[ln σ_f², ln ℓ_1 … ln ℓ_d, ln σ_n²]`.
    ///
    /// The noise entry is 0 when the dataset carries fixed per-point noise.
    pub fn lml_gradient(&self) -> Vec<f64> {
        let d = self.dim();
        let mut grad = vec![0.0; d + 2];
        let Some(chol) = &self.chol else {
            return grad;
        };
        let n = self.len();
        // W = ααᵀ − (K + D)⁻¹; ∂LML/∂θ = ½ Σᵢⱼ Wᵢⱼ ∂Kᵢⱼ/∂θ
        let kinv = chol.inverse();
        let a = &self.alpha;
        let ls = &self.params.lengthscales;
        let sf2 = self.params.signal_variance;
        let xs = &self.dataset.inputs;
        let mut scaled = vec![0.0; d];

        for i in 0..n {
            let wii = a[i] * a[i] - kinv[(i, i)];
            grad[0] += 0.5 * wii * sf2;
            for j in 0..i {
                let w = 2.0 * (a[i] * a[j] - kinv[(i, j)]);
                let mut r2 = 0.0;
                for k in 0..d {
                    let s = (xs[i][k] - xs[j][k]) / ls[k];
                    scaled[k] = s * s;
                    r2 += scaled[k];
                }
                let r = r2.sqrt();
                let e = (-SQRT5 * r).exp();
                let kval = sf2 * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * e;
                grad[0] += 0.5 * w * kval;
                let common = 0.5 * w * sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e;
                for k in 0..d {
                    grad[1 + k] += common * scaled[k];
                }
            }
        }
        if self.dataset.per_point_noise_variance.is_none() {
            let trace_w: f64 = (0..n).map(|i| a[i] * a[i] - kinv[(i, i)]).sum();
            grad[d + 1] = 0.5 * self.noise_variance * trace_w;
        }
        grad
    }

    fn snapshot(&self) -> HomGpSnapshot {
        HomGpSnapshot {
            dataset: self.dataset.clone(),
            params: self.params.clone(),
            noise_variance: self.noise_variance,
            mean_offset: self.mean_offset,
        }
    }
}

impl Serialize for HomGpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.snapshot().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HomGpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let snap = HomGpSnapshot::deserialize(d)?;
        HomGpModel::new(snap.dataset, snap.params, snap.noise_variance, snap.mean_offset)
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn covariance(dataset: &GpDataset, params: &KernelParams, noise: f64) -> DMatrix<f64> {
    let n = dataset.len();
    let xs = &dataset.inputs;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = params.signal_variance;
        for j in 0..i {
            let r = scaled_distance(&xs[i], &xs[j], &params.lengthscales);
            let k = matern52_of_distance(r, params.signal_variance);
            cov[(i, j)] = k;
            cov[(j, i)] = k;
        }
    }
    match &dataset.per_point_noise_variance {
        Some(v) => {
            for (i, s) in v.iter().enumerate() {
                cov[(i, i)] += s;
            }
        }
        None => {
            for i in 0..n {
                cov[(i, i)] += noise;
            }
        }
    }
    cov
}

fn factorize(cov: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in &JITTER_SCHEDULE {
        let mut m = cov.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(m) {
            if jitter > 0.0 {
                log::debug!("covariance factorized with jitter {jitter:e}");
            }
            return Ok((c, jitter));
        }
    }
    Err(Error::Numerical(
        "covariance not positive definite after jitter 1e-4".into(),
    ))
}
