//! Exact Gaussian-process regression with a Matérn-5/2 ARD kernel and an
//! input-dependent (heteroscedastic) noise model.

mod dataset;
mod fit;
mod hetero;
mod hom;
mod kernel;

pub use dataset::{subsample, GpDataset};
pub use fit::{cv_noise_targets, fit_homoscedastic, FitConfig, RESIDUAL_FLOOR};
pub use hetero::{fit_heteroscedastic, HeteroGpModel};
pub use hom::{HomGpModel, JITTER_SCHEDULE};
pub use kernel::{matern_kernel, KernelParams, DEFAULT_LENGTHSCALE_BOUNDS};
