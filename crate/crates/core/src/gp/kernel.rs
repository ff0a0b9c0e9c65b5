use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const SQRT5: f64 = 2.236_067_977_499_79;

/// Lengthscale bounds in normalized input units.
pub const DEFAULT_LENGTHSCALE_BOUNDS: (f64, f64) = (0.05, 5.0);

/// Hyperparameters of an ARD Matérn-5/2 kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub lengthscale_bounds: (f64, f64),
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, lengthscale_bounds: (f64, f64)) -> Result<Self> {
        let params = Self {
            signal_variance,
            lengthscales,
            lengthscale_bounds,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn isotropic(dim: usize, signal_variance: f64, lengthscale: f64) -> Self {
        let mut params = Self {
            signal_variance,
            lengthscales: vec![lengthscale; dim],
            lengthscale_bounds: DEFAULT_LENGTHSCALE_BOUNDS,
        };
        params.clip_lengthscales();
        params
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn clip_lengthscales(&mut self) {
        let (lo, hi) = self.lengthscale_bounds;
        for l in &mut self.lengthscales {
            *l = l.clamp(lo, hi);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lengthscale_bounds;
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid("signal_variance must be positive"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("lengthscale bounds must satisfy 0 < lower <= upper"));
        }
        if self.lengthscales.iter().any(|&l| !(l >= lo && l <= hi)) {
            return Err(Error::invalid("lengthscale outside its bounds"));
        }
        Ok(())
    }
}

/// ARD-scaled Euclidean distance `‖(x1 − x2) / ℓ‖₂`.
#[inline]
pub(crate) fn scaled_distance(x1: &[f64], x2: &[f64], lengthscales: &[f64]) -> f64 {
    x1.iter()
        .zip(x2)
        .zip(lengthscales)
        .map(|((a, b), l)| {
            let d = (a - b) / l;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn matern52_of_distance(r: f64, signal_variance: f64) -> f64 {
    let s = SQRT5 * r;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Matérn ν = 5/2 covariance between two inputs.
pub fn matern_kernel(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != params.dim() || x2.len() != params.dim() {
        return Err(Error::invalid(format!(
            "kernel inputs have dimensions {} and {}, lengthscales have {}",
            x1.len(),
            x2.len(),
            params.dim()
        )));
    }
    let r = scaled_distance(x1, x2, &params.lengthscales);
    Ok(matern52_of_distance(r, params.signal_variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_1d() -> KernelParams {
        KernelParams::new(1.0, vec![1.0], DEFAULT_LENGTHSCALE_BOUNDS).unwrap()
    }

    #[test]
    fn equal_inputs_give_signal_variance() {
        let p = KernelParams::new(2.0, vec![0.3, 1.5], DEFAULT_LENGTHSCALE_BOUNDS).unwrap();
        let k = matern_kernel(&[0.2, -1.0], &[0.2, -1.0], &p).unwrap();
        assert_eq!(k, 2.0);
    }

    #[test]
    fn unit_distance_closed_form() {
        // (1 + √5 + 5/3)·e^(−√5)
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        let k = matern_kernel(&[0.0], &[1.0], &unit_1d()).unwrap();
        assert!((k - expected).abs() < 1e-15);
        assert!((k - 0.5240).abs() < 1e-4);
    }

    #[test]
    fn decays_monotonically_to_zero() {
        let p = unit_1d();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let k = matern_kernel(&[0.0], &[i as f64 * 0.25], &p).unwrap();
            assert!(k <= prev);
            prev = k;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = matern_kernel(&[0.0, 1.0], &[1.0], &unit_1d()).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn params_validation() {
        assert!(KernelParams::new(0.0, vec![1.0], (0.05, 5.0)).is_err());
        assert!(KernelParams::new(1.0, vec![10.0], (0.05, 5.0)).is_err());
        assert!(KernelParams::new(1.0, vec![1.0], (2.0, 1.0)).is_err());
        let p = KernelParams::isotropic(3, 1.0, 100.0);
        assert_eq!(p.lengthscales, vec![5.0; 3]);
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(-3.0f64..3.0, 3),
                     b in prop::collection::vec(-3.0f64..3.0, 3),
                     ls in prop::collection::vec(0.05f64..5.0, 3)) {
            let p = KernelParams::new(1.3, ls, DEFAULT_LENGTHSCALE_BOUNDS).unwrap();
            let k1 = matern_kernel(&a, &b, &p).unwrap();
            let k2 = matern_kernel(&b, &a, &p).unwrap();
            prop_assert_eq!(k1, k2);
            prop_assert!(k1 > 0.0 && k1 <= 1.3);
        }
    }
}
