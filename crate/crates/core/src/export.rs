//! Dense 2-D slices of an estimator for heatmaps of `μ`, `σ` and the
//! precondition boundary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{Cell, EnvConfig, Environment, GridWorld, Move, WaterAction, WaterState, WateringWorld};
use crate::error::{Error, Result};
use crate::mde::{Mde, PreconditionParams};

/// Which two coordinates to sweep, and what to hold fixed.
///
/// Gridworld: dims `x`,`y` over every cell with `action` (default `right`).
/// Watering: dims `y`,`z` sweep the commanded translation target from the
/// fixed state in `at`; dims `y`,`theta` or `z`,`theta` sweep the source
/// position and the commanded tilt of a rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub dims: (String, String),
    pub action: Option<String>,
    /// Fixed state coordinates (`y`, `z`, `theta`, `source_volume`).
    pub at: BTreeMap<String, f64>,
    /// Points per continuous axis.
    pub resolution: usize,
    pub params: PreconditionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub u: f64,
    pub v: f64,
    pub mu: f64,
    pub sigma: f64,
    pub ucb: f64,
    pub in_precondition: bool,
}

fn slice_error(msg: impl Into<String>) -> Error {
    Error::config("slice", msg)
}

fn row(mde: &Mde, params: &PreconditionParams, u: f64, v: f64, x: &[f64]) -> Result<SliceRow> {
    let (mu, sigma) = mde.predict_features(x)?;
    Ok(SliceRow {
        u,
        v,
        mu,
        sigma,
        ucb: mu + params.beta * sigma,
        in_precondition: params.admits(mu, sigma),
    })
}

pub fn export_slice(env_cfg: &EnvConfig, mde: &Mde, spec: &SliceSpec) -> Result<Vec<SliceRow>> {
    match env_cfg {
        EnvConfig::Gridworld(c) => grid_slice(&GridWorld::from_config(c)?, mde, spec),
        EnvConfig::Watering(c) => water_slice(&WateringWorld::from_config(c)?, mde, spec),
    }
}

fn grid_slice(world: &GridWorld, mde: &Mde, spec: &SliceSpec) -> Result<Vec<SliceRow>> {
    let swap = match (spec.dims.0.as_str(), spec.dims.1.as_str()) {
        ("x", "y") => false,
        ("y", "x") => true,
        (a, b) => return Err(slice_error(format!("gridworld slices span x and y, got {a},{b}"))),
    };
    if let Some(k) = spec.at.keys().next() {
        return Err(slice_error(format!("gridworld has no fixed coordinate {k}")));
    }
    let name = spec.action.as_deref().unwrap_or("right");
    let action: Move = serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| slice_error(format!("unknown gridworld action {name:?}")))?;
    let (nu, nv) = if swap {
        (world.height(), world.width())
    } else {
        (world.width(), world.height())
    };
    let mut rows = Vec::with_capacity((nu * nv) as usize);
    for u in 0..nu {
        for v in 0..nv {
            let cell = if swap { Cell::new(v, u) } else { Cell::new(u, v) };
            rows.push(row(
                mde,
                &spec.params,
                f64::from(u),
                f64::from(v),
                &world.features(&cell, &action),
            )?);
        }
    }
    Ok(rows)
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo + hi) / 2.0];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn water_slice(world: &WateringWorld, mde: &Mde, spec: &SliceSpec) -> Result<Vec<SliceRow>> {
    if spec.resolution == 0 {
        return Err(slice_error("resolution must be at least 1"));
    }
    if spec.action.is_some() {
        return Err(slice_error("watering slices choose the action from dims"));
    }
    let c = world.config();
    let mut base = WaterState {
        y: (c.start_y.0 + c.start_y.1) / 2.0,
        z: (c.start_z.0 + c.start_z.1) / 2.0,
        theta: c.theta_range.0,
        source_volume: c.source_volume,
        target_volume: 0,
        spilled: 0,
    };
    for (k, &v) in &spec.at {
        match k.as_str() {
            "y" => base.y = v,
            "z" => base.z = v,
            "theta" => base.theta = v,
            "source_volume" if v >= 0.0 && v.fract() == 0.0 => base.source_volume = v as u32,
            _ => return Err(slice_error(format!("cannot fix watering coordinate {k}={v}"))),
        }
    }
    let n = spec.resolution;
    let mut rows = Vec::with_capacity(n * n);
    match (spec.dims.0.as_str(), spec.dims.1.as_str()) {
        ("y", "z") => {
            for y in linspace(c.workspace_y, n) {
                for z in linspace(c.workspace_z, n) {
                    let a = WaterAction::Translate { y, z };
                    rows.push(row(mde, &spec.params, y, z, &world.features(&base, &a))?);
                }
            }
        }
        (pos @ ("y" | "z"), "theta") => {
            let range = if pos == "y" { c.workspace_y } else { c.workspace_z };
            for p in linspace(range, n) {
                let mut s = base.clone();
                if pos == "y" {
                    s.y = p;
                } else {
                    s.z = p;
                }
                for theta in linspace(c.theta_range, n) {
                    let a = WaterAction::Rotate { theta };
                    rows.push(row(mde, &spec.params, p, theta, &world.features(&s, &a))?);
                }
            }
        }
        (a, b) => {
            return Err(slice_error(format!(
                "watering slices span y,z or y|z,theta; got {a},{b}"
            )))
        }
    }
    Ok(rows)
}

pub fn write_slice_csv<W: Write>(out: W, spec: &SliceSpec, rows: &[SliceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        spec.dims.0.as_str(),
        spec.dims.1.as_str(),
        "mu",
        "sigma",
        "ucb",
        "in_precondition",
    ])?;
    for r in rows {
        w.write_record([
            r.u.to_string(),
            r.v.to_string(),
            r.mu.to_string(),
            r.sigma.to_string(),
            r.ucb.to_string(),
            r.in_precondition.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
