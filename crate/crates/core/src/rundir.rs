//! On-disk layout of a training run.
//!
//! ```text
//! <run>/config.json            exact input configuration
//! <run>/manifest.json          hashes, seed, environment, file inventory
//! <run>/records/iter_XXX.json  one record per iteration
//! <run>/snapshots/mde_XXX.json estimator after XXX iterations (000 = prior)
//! <run>/dataset.jsonl          every labelled transition, in collection order
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::learning::{run_loop_with, snapshot_name, EnvRecord, Strategy};
use crate::mde::{EnvDataset, Mde, MdeDataset};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const RECORDS_DIR: &str = "records";
pub const SNAPSHOTS_DIR: &str = "snapshots";

/// Build the concrete environment for an [`crate::env::EnvConfig`] and
/// evaluate `$body` with it bound to `$env`.
#[macro_export]
macro_rules! with_env {
    ($cfg:expr, |$env:ident| $body:expr) => {
        match $cfg {
            $crate::env::EnvConfig::Gridworld(c) => {
                let $env = $crate::env::GridWorld::from_config(c)?;
                $body
            }
            $crate::env::EnvConfig::Watering(c) => {
                let $env = $crate::env::WateringWorld::from_config(c)?;
                $body
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// SHA-256 of `config.json` as stored.
    pub config_sha256: String,
    pub seed: u64,
    pub environment: String,
    pub strategy: Strategy,
    pub iterations: usize,
    pub completed_iterations: usize,
    /// Unix seconds; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
    pub updated_unix: u64,
    pub files: Vec<FileEntry>,
}

fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn record_name(iteration: usize) -> String {
    format!("iter_{iteration:03}")
}

/// Make `dir` ready for fresh output. A non-empty directory is refused
/// unless `force`, in which case only `managed` entries are removed.
pub fn prepare_output(dir: &Path, force: bool, managed: &[&str]) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Exists(dir.to_path_buf()));
        }
        for name in managed {
            let p = dir.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Write `bytes` atomically within `path`'s directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in fs::read_dir(dir.join(&rel))? {
            let entry = entry?;
            let name = rel.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                stack.push(name);
            } else if name != Path::new(MANIFEST_FILE) {
                let bytes = fs::read(dir.join(&name))?;
                files.push(FileEntry {
                    path: name.to_string_lossy().replace('\\', "/"),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                });
            }
        }
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

const RUN_ENTRIES: [&str; 5] = [CONFIG_FILE, MANIFEST_FILE, DATASET_FILE, RECORDS_DIR, SNAPSHOTS_DIR];

/// Train from raw config bytes into `dir`, persisting every iteration.
pub fn train_run(dir: &Path, config_bytes: &[u8], force: bool) -> Result<Manifest> {
    let cfg = RunConfig::from_slice(config_bytes)?;
    prepare_output(dir, force, &RUN_ENTRIES)?;
    with_env!(&cfg.environment, |env| train_into(&env, &cfg, config_bytes, dir))
}

fn train_into<E: Environment>(env: &E, cfg: &RunConfig, config_bytes: &[u8], dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir.join(RECORDS_DIR))?;
    fs::create_dir_all(dir.join(SNAPSHOTS_DIR))?;
    fs::write(dir.join(CONFIG_FILE), config_bytes)?;
    let created = now_unix();
    let mut manifest = Manifest {
        schema_version: crate::config::SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(config_bytes),
        seed: cfg.learning.seed,
        environment: env.id().to_string(),
        strategy: cfg.learning.strategy,
        iterations: cfg.learning.iterations,
        completed_iterations: 0,
        created_unix: created,
        updated_unix: created,
        files: Vec::new(),
    };
    let update = |m: &mut Manifest| -> Result<()> {
        m.updated_unix = now_unix();
        m.files = inventory(dir)?;
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(m)?)
    };

    let prior = Mde::prior(env, &cfg.learning.mde)?;
    prior.save(&snapshot_path(dir, 0))?;
    MdeDataset::new(env).write_jsonl(env, &dir.join(DATASET_FILE))?;
    update(&mut manifest)?;

    run_loop_with(env, &cfg.learning, |record, mde, dataset| {
        let j = record.iteration;
        write_atomic(
            &dir.join(RECORDS_DIR).join(format!("{}.json", record_name(j))),
            &serde_json::to_vec(record)?,
        )?;
        mde.save(&snapshot_path(dir, j + 1))?;
        dataset.write_jsonl(env, &dir.join(DATASET_FILE))?;
        manifest.completed_iterations = j + 1;
        update(&mut manifest)?;
        info!(
            "{}: iteration {} done, {} transitions",
            dir.display(),
            j + 1,
            dataset.len()
        );
        Ok(())
    })?;
    Ok(manifest)
}

fn snapshot_path(dir: &Path, completed: usize) -> PathBuf {
    dir.join(SNAPSHOTS_DIR)
        .join(format!("{}.json", snapshot_name(completed)))
}

/// A completed or partial run directory opened for reading.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub config: RunConfig,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl RunDir {
    /// Open and verify the manifest against the stored configuration.
    pub fn open(path: &Path) -> Result<Self> {
        let mpath = path.join(MANIFEST_FILE);
        let mbytes = fs::read(&mpath).map_err(|e| corrupt(&mpath, e.to_string()))?;
        let manifest: Manifest = serde_json::from_slice(&mbytes).map_err(|e| corrupt(&mpath, e.to_string()))?;
        let cpath = path.join(CONFIG_FILE);
        let cbytes = fs::read(&cpath).map_err(|e| corrupt(&cpath, e.to_string()))?;
        if sha256_hex(&cbytes) != manifest.config_sha256 {
            return Err(corrupt(&cpath, "hash does not match the manifest"));
        }
        let config = RunConfig::from_slice(&cbytes).map_err(|e| corrupt(&cpath, e.to_string()))?;
        if config.environment.id() != manifest.environment {
            return Err(corrupt(&mpath, "environment does not match the stored config"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
            config,
        })
    }

    pub fn completed(&self) -> usize {
        self.manifest.completed_iterations
    }

    pub fn seed(&self) -> u64 {
        self.config.learning.seed
    }

    pub fn snapshot_path(&self, completed: usize) -> PathBuf {
        snapshot_path(&self.path, completed)
    }

    /// Estimator after `completed` iterations.
    pub fn load_snapshot(&self, completed: usize) -> Result<Mde> {
        if completed > self.completed() {
            return Err(Error::config(
                "iterations",
                format!("iteration {completed} not available; run has {}", self.completed()),
            ));
        }
        let p = self.snapshot_path(completed);
        Mde::load(&p).map_err(|e| match e {
            Error::Corrupt { .. } => e,
            other => corrupt(&p, other.to_string()),
        })
    }

    pub fn load_dataset<E: Environment>(&self, env: &E) -> Result<EnvDataset<E>> {
        let p = self.path.join(DATASET_FILE);
        MdeDataset::read_jsonl(env, &p).map_err(|e| match e {
            Error::Corrupt { .. } => e,
            other => corrupt(&p, other.to_string()),
        })
    }

    pub fn load_record<E: Environment>(&self, iteration: usize) -> Result<EnvRecord<E>> {
        let p = self
            .path
            .join(RECORDS_DIR)
            .join(format!("{}.json", record_name(iteration)));
        let bytes = fs::read(&p).map_err(|e| corrupt(&p, e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| corrupt(&p, e.to_string()))
    }
}
