//! Model Deviation Estimator: a heteroscedastic GP over featurized
//! `(s, a)` pairs predicting how far the dynamics model's prediction will
//! land from the true next state, and the precondition built on top of it.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gp::{
    fit_heteroscedastic, subsample, FitConfig, GpDataset, HeteroGpModel, KernelParams, DEFAULT_LENGTHSCALE_BOUNDS,
};
use crate::rng;

/// One executed step with the model's prediction alongside the outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub observed_next: S,
    pub predicted_next: S,
    pub deviation: f64,
}

pub type EnvTransition<E> = Transition<<E as Environment>::State, <E as Environment>::Action>;

/// Label `(s, a, s_next)` with `d(f̂(s, a), s_next)`.
pub fn label_transition<E: Environment>(
    env: &E,
    s: &E::State,
    a: &E::Action,
    s_next: &E::State,
) -> Result<EnvTransition<E>> {
    let predicted_next = env.model_step(s, a)?;
    let deviation = env.distance(&predicted_next, s_next);
    Ok(Transition {
        state: s.clone(),
        action: a.clone(),
        observed_next: s_next.clone(),
        predicted_next,
        deviation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdeDataset<S, A> {
    pub env: String,
    pub featurizer: String,
    pub transitions: Vec<Transition<S, A>>,
}

pub type EnvDataset<E> = MdeDataset<<E as Environment>::State, <E as Environment>::Action>;

#[derive(Serialize, Deserialize)]
struct JsonlRow<S, A> {
    env: String,
    featurizer: String,
    features: Vec<f64>,
    #[serde(flatten)]
    transition: Transition<S, A>,
}

impl<S, A> MdeDataset<S, A>
where
    S: Clone + Serialize + DeserializeOwned,
    A: Clone + Serialize + DeserializeOwned,
{
    pub fn new<E: Environment<State = S, Action = A>>(env: &E) -> Self {
        Self {
            env: env.id().to_string(),
            featurizer: env.featurizer(),
            transitions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn check_env<E: Environment<State = S, Action = A>>(&self, env: &E) -> Result<()> {
        if self.env != env.id() || self.featurizer != env.featurizer() {
            return Err(Error::invalid(format!(
                "dataset for {}/{} used with {}/{}",
                self.env,
                self.featurizer,
                env.id(),
                env.featurizer()
            )));
        }
        Ok(())
    }

    /// Append all of `other`; both must share environment and featurizer.
    pub fn extend_from(&mut self, other: &Self) -> Result<()> {
        if self.env != other.env || self.featurizer != other.featurizer {
            return Err(Error::invalid("cannot merge datasets from different featurizers"));
        }
        self.transitions.extend(other.transitions.iter().cloned());
        Ok(())
    }

    /// GP regression data: features to deviations.
    pub fn to_gp_dataset<E: Environment<State = S, Action = A>>(&self, env: &E) -> Result<GpDataset> {
        self.check_env(env)?;
        let inputs = self
            .transitions
            .iter()
            .map(|t| env.features(&t.state, &t.action))
            .collect();
        let targets = self.transitions.iter().map(|t| t.deviation).collect();
        GpDataset::new(inputs, targets)
    }

    pub fn write_jsonl<E: Environment<State = S, Action = A>>(&self, env: &E, path: &Path) -> Result<()> {
        self.check_env(env)?;
        let mut out = BufWriter::new(fs::File::create(path)?);
        for t in &self.transitions {
            let row = JsonlRow {
                env: self.env.clone(),
                featurizer: self.featurizer.clone(),
                features: env.features(&t.state, &t.action),
                transition: t.clone(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read a JSON-lines dataset, checking every row against `env`.
    pub fn read_jsonl<E: Environment<State = S, Action = A>>(env: &E, path: &Path) -> Result<Self> {
        let corrupt = |message: String| Error::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        let mut ds = Self::new(env);
        let reader = BufReader::new(fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlRow<S, A> =
                serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
            if row.env != ds.env || row.featurizer != ds.featurizer {
                return Err(corrupt(format!(
                    "line {}: transition from {}/{}",
                    i + 1,
                    row.env,
                    row.featurizer
                )));
            }
            ds.transitions.push(row.transition);
        }
        Ok(ds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreconditionParams {
    pub d_max: f64,
    pub beta: f64,
}

impl PreconditionParams {
    pub fn new(d_max: f64, beta: f64) -> Result<Self> {
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(Error::invalid("d_max must be positive"));
        }
        if !beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        Ok(Self { d_max, beta })
    }

    /// Parameters for `P(d̂ > d_max) < delta`.
    pub fn from_delta(d_max: f64, delta: f64) -> Result<Self> {
        Self::new(d_max, beta_from_delta(delta)?)
    }

    pub fn admits(&self, mu: f64, sigma: f64) -> bool {
        mu + self.beta * sigma < self.d_max
    }
}

/// `Φ⁻¹(1 − delta)`.
pub fn beta_from_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - delta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdeConfig {
    /// Maximum number of training rows; larger datasets are subsampled.
    pub cap: usize,
    pub fit: FitConfig,
    pub prior_signal_variance: f64,
    pub prior_noise_variance: f64,
    pub prior_lengthscale: f64,
}

impl Default for MdeConfig {
    fn default() -> Self {
        Self {
            cap: 300,
            fit: FitConfig::default(),
            prior_signal_variance: 0.04,
            prior_noise_variance: 1e-4,
            prior_lengthscale: 0.3,
        }
    }
}

impl MdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cap == 0 {
            return Err(Error::invalid("cap must be at least 1"));
        }
        self.fit.validate()?;
        for (name, v) in [
            ("prior_signal_variance", self.prior_signal_variance),
            ("prior_noise_variance", self.prior_noise_variance),
            ("prior_lengthscale", self.prior_lengthscale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn prior_params(&self, dim: usize) -> KernelParams {
        let mut p = KernelParams::isotropic(dim, self.prior_signal_variance, self.prior_lengthscale);
        p.lengthscale_bounds = DEFAULT_LENGTHSCALE_BOUNDS;
        p
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mde {
    featurizer: String,
    /// Rows the GP was conditioned on (after subsampling).
    n_train: usize,
    gp: HeteroGpModel,
}

impl Mde {
    /// Untrained estimator: `μ = 0` everywhere with the prior spread.
    pub fn prior<E: Environment>(env: &E, cfg: &MdeConfig) -> Result<Self> {
        Ok(Self {
            featurizer: env.featurizer(),
            n_train: 0,
            gp: HeteroGpModel::prior(cfg.prior_params(env.feature_dim()), cfg.prior_noise_variance)?,
        })
    }

    pub fn featurizer(&self) -> &str {
        &self.featurizer
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn gp(&self) -> &HeteroGpModel {
        &self.gp
    }

    /// `(max(0, mean), total std)` at a feature vector.
    pub fn predict_features(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (mu, sigma) = self.gp.predict(x)?;
        Ok((mu.max(0.0), sigma))
    }

    pub fn predict<E: Environment>(&self, env: &E, s: &E::State, a: &E::Action) -> Result<(f64, f64)> {
        if self.featurizer != env.featurizer() {
            return Err(Error::invalid(format!(
                "estimator trained on {} features queried with {}",
                self.featurizer,
                env.featurizer()
            )));
        }
        self.predict_features(&env.features(s, a))
    }

    pub fn in_precondition<E: Environment>(
        &self,
        env: &E,
        s: &E::State,
        a: &E::Action,
        params: &PreconditionParams,
    ) -> Result<bool> {
        let (mu, sigma) = self.predict(env, s, a)?;
        Ok(params.admits(mu, sigma))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn mde_predict<E: Environment>(mde: &Mde, env: &E, s: &E::State, a: &E::Action) -> Result<(f64, f64)> {
    mde.predict(env, s, a)
}

pub fn in_precondition<E: Environment>(
    mde: &Mde,
    env: &E,
    s: &E::State,
    a: &E::Action,
    params: &PreconditionParams,
) -> Result<bool> {
    mde.in_precondition(env, s, a, params)
}

/// Fit an estimator on at most `cfg.cap` transitions.
///
/// An empty dataset gives the prior. Fewer than four rows are too few for
/// cross-validated noise targets, so the prior hyperparameters are
/// conditioned on them as-is.
pub fn train_mde<E: Environment>(env: &E, dataset: &EnvDataset<E>, cfg: &MdeConfig, seed: u64) -> Result<Mde> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Mde::prior(env, cfg);
    }
    let full = dataset.to_gp_dataset(env)?;
    let rows = subsample(&full, cfg.cap, rng::derive_seed(seed, rng::SUBSAMPLE, &[]))?;
    let gp = if rows.len() < 4 {
        HeteroGpModel::conditioned(&rows, cfg.prior_params(env.feature_dim()), cfg.prior_noise_variance)?
    } else {
        fit_heteroscedastic(&rows, &cfg.fit, rng::derive_seed(seed, "mde_fit", &[]))?
    };
    Ok(Mde {
        featurizer: env.featurizer(),
        n_train: rows.len(),
        gp,
    })
}
