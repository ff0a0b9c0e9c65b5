//! Versioned JSON configuration for single runs and experiment suites.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::learning::{LearningConfig, Strategy};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// One training run: an environment and a learning configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub environment: EnvConfig,
    #[serde(default)]
    pub learning: LearningConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            environment: EnvConfig::default(),
            learning: LearningConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = parse(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_slice(&read_config(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.environment.validate().map_err(|e| prefixed("environment", e))?;
        self.learning.validate().map_err(|e| prefixed("learning", e))
    }
}

/// Full factorial over environments × strategies × seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub environments: Vec<EnvConfig>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Template; `strategy` and `seed` are overwritten per cell.
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Worker threads; cells beyond this many wait.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    1
}

impl SuiteConfig {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = parse(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_slice(&read_config(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        if self.environments.is_empty() {
            return Err(Error::config("environments", "must list at least one environment"));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategies", "must list at least one strategy"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "must not repeat"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs", "must be at least 1"));
        }
        for (i, env) in self.environments.iter().enumerate() {
            env.validate().map_err(|e| prefixed(&format!("environments[{i}]"), e))?;
        }
        self.learning.validate().map_err(|e| prefixed("learning", e))?;
        self.eval.validate().map_err(|e| prefixed("eval", e))
    }

    /// Run configuration of one cell.
    pub fn cell(&self, env: usize, strategy: Strategy, seed: u64) -> RunConfig {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            environment: self.environments[env].clone(),
            learning: LearningConfig {
                strategy,
                seed,
                ..self.learning.clone()
            },
        }
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_config(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

/// Deserialize, reporting the JSON path of the first offending field.
pub fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })
}

fn check_schema(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::config(
            "schema_version",
            format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
        ))
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        Error::InvalidArgument(m) => Error::config(prefix, m),
        other => other,
    }
}
