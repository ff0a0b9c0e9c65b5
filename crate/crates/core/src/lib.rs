//! Learning where an inaccurate dynamics model can be trusted.
//!
//! A Model Deviation Estimator (MDE) predicts how far the model's next-state
//! prediction lands from reality for a state-action pair. Its upper
//! confidence bound defines a model precondition that constrains an RRT
//! planner, and an active-learning loop chooses which trajectories to
//! execute so the estimator improves where planning needs it.

pub mod acquisition;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod export;
pub mod gp;
pub mod learning;
pub mod mde;
pub mod planner;
pub mod rng;
pub mod rundir;

pub use error::{Error, Result};
