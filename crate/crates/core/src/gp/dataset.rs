use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Regression training pairs, optionally with a known noise variance per point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_point_noise_variance: Option<Vec<f64>>,
}

impl GpDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let ds = Self {
            inputs,
            targets,
            per_point_noise_variance: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Result<Self> {
        self.per_point_noise_variance = Some(noise);
        self.validate()?;
        Ok(self)
    }

    pub fn without_noise(&self) -> Self {
        Self {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            per_point_noise_variance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Input dimensionality, `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::invalid(format!(
                "{} input rows but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        if let Some(d) = self.dim() {
            if self.inputs.iter().any(|r| r.len() != d) {
                return Err(Error::invalid("input rows have inconsistent dimensions"));
            }
        }
        if let Some(noise) = &self.per_point_noise_variance {
            if noise.len() != self.len() {
                return Err(Error::invalid("per-point noise length differs from target count"));
            }
            if noise.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("per-point noise variances must be positive"));
            }
        }
        Ok(())
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            per_point_noise_variance: self
                .per_point_noise_variance
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }
}

/// Uniform subsample of at most `cap` rows without replacement.
///
/// Selected rows keep their original relative order.
pub fn subsample(dataset: &GpDataset, cap: usize, seed: u64) -> Result<GpDataset> {
    if cap == 0 {
        return Err(Error::invalid("subsample cap must be at least 1"));
    }
    if dataset.len() <= cap {
        return Ok(dataset.clone());
    }
    let mut rng = rng::seeded(seed);
    let mut picked = index::sample(&mut rng, dataset.len(), cap).into_vec();
    picked.sort_unstable();
    Ok(dataset.select(&picked))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> GpDataset {
        GpDataset::new(
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n).map(|i| i as f64 * 2.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn validation_catches_shape_errors() {
        assert!(GpDataset::new(vec![vec![0.0]], vec![]).is_err());
        assert!(GpDataset::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.0, 1.0]).is_err());
        assert!(ramp(3).with_noise(vec![1.0, 1.0]).is_err());
        assert!(ramp(2).with_noise(vec![1.0, 0.0]).is_err());
        assert!(ramp(2).with_noise(vec![1.0, 0.5]).is_ok());
    }

    #[test]
    fn subsample_below_cap_is_identity() {
        let ds = ramp(100);
        assert_eq!(subsample(&ds, 300, 1).unwrap(), ds);
    }

    #[test]
    fn subsample_above_cap() {
        let ds = ramp(1000);
        let sub = subsample(&ds, 300, 5).unwrap();
        assert_eq!(sub.len(), 300);
        for (x, y) in sub.inputs.iter().zip(&sub.targets) {
            let i = x[0] as usize;
            assert_eq!(ds.targets[i], *y);
        }
        let mut seen: Vec<_> = sub.inputs.iter().map(|x| x[0] as usize).collect();
        seen.dedup();
        assert_eq!(seen.len(), 300);
        assert_eq!(sub, subsample(&ds, 300, 5).unwrap());
        assert_ne!(sub, subsample(&ds, 300, 6).unwrap());
    }

    #[test]
    fn zero_cap_rejected() {
        assert!(subsample(&ramp(3), 0, 0).is_err());
    }
}
