//! Geometric watering surrogate.
//!
//! A point-sized source container moves in the (y, z) plane and tilts by
//! θ degrees. Tilting past the pour threshold releases one unit of water,
//! which drops straight down: it is caught by the target container if it
//! falls through the target's opening, and spilled if it lands anywhere
//! else or strikes the solid part of a leaf on the way. Translations stop
//! just short of the first leaf or target-container wall they touch.
//!
//! The dynamics model ignores leaves: it always reaches the commanded pose
//! and counts a pour as caught whenever the spout is over the opening.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_unit_interval, Environment, PlanningProblem, Problem};
use crate::error::{Error, Result};
use crate::planner::Trajectory;
use crate::rng::StreamRng;

/// Horizontal segment at height `z` spanning `y`, with open sub-intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Leaf {
    pub y: (f64, f64),
    pub z: f64,
    #[serde(default)]
    pub holes: Vec<(f64, f64)>,
}

impl Leaf {
    pub fn solid_at(&self, y: f64) -> bool {
        y >= self.y.0 && y <= self.y.1 && !self.holes.iter().any(|&(a, b)| y > a && y < b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WateringConfig {
    pub workspace_y: (f64, f64),
    pub workspace_z: (f64, f64),
    /// Tilt range in degrees.
    pub theta_range: (f64, f64),
    /// The target container occupies `target_opening × [workspace_z.0, target_top]`.
    pub target_opening: (f64, f64),
    pub target_top: f64,
    /// Margin around the target container that plans must keep clear of.
    pub clearance: f64,
    pub leaves: Vec<Leaf>,
    pub pour_threshold: f64,
    /// Tilt used by goal-biased samples.
    pub pour_angle: f64,
    pub source_volume: u32,
    pub start_y: (f64, f64),
    pub start_z: (f64, f64),
    pub goal_min_target: u32,
    pub goal_max_spill: u32,
    pub translation_step: f64,
    pub rotation_step: f64,
    /// Chance that a random extension rotates before it translates.
    pub rotate_probability: f64,
    /// Pour-height bin boundaries; `k` edges give `k + 1` bins.
    pub height_bin_edges: Vec<f64>,
    /// Restrict MDE input to the commanded pose.
    pub action_only_features: bool,
    /// Distance kept from a contact after a blocked translation.
    pub contact_backoff: f64,
}

impl Default for WateringConfig {
    fn default() -> Self {
        Self {
            workspace_y: (0.0, 1.0),
            workspace_z: (0.0, 1.0),
            theta_range: (0.0, 180.0),
            target_opening: (0.6, 0.8),
            target_top: 0.2,
            clearance: 0.05,
            leaves: vec![Leaf {
                y: (0.5, 0.9),
                z: 0.5,
                holes: vec![(0.66, 0.74)],
            }],
            pour_threshold: 130.0,
            pour_angle: 140.0,
            source_volume: 3,
            start_y: (0.05, 0.4),
            start_z: (0.3, 0.9),
            goal_min_target: 1,
            goal_max_spill: 0,
            translation_step: 0.05,
            rotation_step: 15.0,
            rotate_probability: 0.3,
            height_bin_edges: vec![0.5, 0.75],
            action_only_features: false,
            contact_backoff: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterState {
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub source_volume: u32,
    pub target_volume: u32,
    pub spilled: u32,
}

impl WaterState {
    pub fn total_volume(&self) -> u32 {
        self.source_volume + self.target_volume + self.spilled
    }

    fn with_pose(&self, y: f64, z: f64, theta: f64) -> Self {
        Self {
            y,
            z,
            theta,
            ..self.clone()
        }
    }
}

/// One motion: either a straight-line translation or an in-place rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WaterAction {
    Translate { y: f64, z: f64 },
    Rotate { theta: f64 },
}

impl WaterAction {
    /// Build the action that moves `s` to the pose `(y, z, theta)`. Changing
    /// position and tilt in one motion is not allowed.
    pub fn to_pose(s: &WaterState, y: f64, z: f64, theta: f64) -> Result<Self> {
        let moves = y != s.y || z != s.z;
        let turns = theta != s.theta;
        match (moves, turns) {
            (true, true) => Err(Error::invalid("an action either translates or rotates, not both")),
            (false, true) => Ok(WaterAction::Rotate { theta }),
            _ => Ok(WaterAction::Translate { y, z }),
        }
    }

    /// Commanded pose when applied from `s`.
    pub fn desired(&self, s: &WaterState) -> (f64, f64, f64) {
        match *self {
            WaterAction::Translate { y, z } => (y, z, s.theta),
            WaterAction::Rotate { theta } => (s.y, s.z, theta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryType {
    BelowSuccess,
    BelowSpill,
    AboveSuccess,
    AboveSpill,
    /// Execution ended without dispensing anything.
    NoPour,
}

impl TrajectoryType {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryType::BelowSuccess => "below_success",
            TrajectoryType::BelowSpill => "below_spill",
            TrajectoryType::AboveSuccess => "above_success",
            TrajectoryType::AboveSpill => "above_spill",
            TrajectoryType::NoPour => "no_pour",
        }
    }
}

#[derive(Clone, Debug)]
pub struct WateringWorld {
    cfg: WateringConfig,
}

/// Parameter in `[0, 1]` where the segment `p0 → p1` first enters the box,
/// or `None` if it never does.
fn segment_box_entry(p0: (f64, f64), p1: (f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Option<f64> {
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (a, b, l, h) in [(p0.0, p1.0, lo.0, hi.0), (p0.1, p1.1, lo.1, hi.1)] {
        let d = b - a;
        if d == 0.0 {
            if a < l || a > h {
                return None;
            }
        } else {
            let (mut ta, mut tb) = ((l - a) / d, (h - a) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(t0)
}

impl WateringWorld {
    pub fn from_config(cfg: &WateringConfig) -> Result<Self> {
        check_unit_interval("workspace_y", cfg.workspace_y)?;
        check_unit_interval("workspace_z", cfg.workspace_z)?;
        check_unit_interval("theta_range", cfg.theta_range)?;
        check_unit_interval("target_opening", cfg.target_opening)?;
        check_unit_interval("start_y", cfg.start_y)?;
        check_unit_interval("start_z", cfg.start_z)?;
        let (ylo, yhi) = cfg.workspace_y;
        let (zlo, zhi) = cfg.workspace_z;
        if cfg.target_opening.0 < ylo || cfg.target_opening.1 > yhi {
            return Err(Error::invalid("target_opening must lie inside the workspace"));
        }
        if !(cfg.target_top > zlo && cfg.target_top < zhi) {
            return Err(Error::invalid("target_top must lie inside the workspace"));
        }
        if !(cfg.clearance >= 0.0) {
            return Err(Error::invalid("clearance must be nonnegative"));
        }
        if cfg.start_y.0 < ylo || cfg.start_y.1 >= cfg.target_opening.0 - cfg.clearance {
            return Err(Error::invalid("start_y must lie left of the target container"));
        }
        if cfg.start_z.0 < zlo || cfg.start_z.1 > zhi {
            return Err(Error::invalid("start_z must lie inside the workspace"));
        }
        if !(cfg.pour_threshold > cfg.theta_range.0 && cfg.pour_threshold < cfg.theta_range.1) {
            return Err(Error::invalid("pour_threshold must lie inside theta_range"));
        }
        if !(cfg.pour_angle >= cfg.pour_threshold && cfg.pour_angle <= cfg.theta_range.1) {
            return Err(Error::invalid("pour_angle must be at least pour_threshold"));
        }
        if cfg.source_volume < cfg.goal_min_target || cfg.source_volume == 0 {
            return Err(Error::invalid("source_volume must cover goal_min_target"));
        }
        if !(cfg.translation_step > 0.0 && cfg.rotation_step > 0.0) {
            return Err(Error::invalid("extension steps must be positive"));
        }
        if !(0.0..=1.0).contains(&cfg.rotate_probability) {
            return Err(Error::invalid("rotate_probability must be a probability"));
        }
        if !(cfg.contact_backoff >= 0.0) {
            return Err(Error::invalid("contact_backoff must be nonnegative"));
        }
        if cfg.height_bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("height_bin_edges must be strictly increasing"));
        }
        for leaf in &cfg.leaves {
            check_unit_interval("leaf y", leaf.y)?;
            if !(leaf.z > cfg.target_top && leaf.z < zhi) {
                return Err(Error::invalid("leaves must sit above the target container"));
            }
            for &h in &leaf.holes {
                check_unit_interval("leaf hole", h)?;
            }
        }
        Ok(Self { cfg: cfg.clone() })
    }

    pub fn config(&self) -> &WateringConfig {
        &self.cfg
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.cfg.leaves
    }

    pub fn set_leaves(&mut self, leaves: Vec<Leaf>) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.leaves = leaves;
        *self = Self::from_config(&cfg)?;
        Ok(())
    }

    fn y_span(&self) -> f64 {
        self.cfg.workspace_y.1 - self.cfg.workspace_y.0
    }

    fn z_span(&self) -> f64 {
        self.cfg.workspace_z.1 - self.cfg.workspace_z.0
    }

    fn theta_span(&self) -> f64 {
        self.cfg.theta_range.1 - self.cfg.theta_range.0
    }

    fn pose_in_workspace(&self, y: f64, z: f64, theta: f64) -> bool {
        let c = &self.cfg;
        y >= c.workspace_y.0
            && y <= c.workspace_y.1
            && z >= c.workspace_z.0
            && z <= c.workspace_z.1
            && theta >= c.theta_range.0
            && theta <= c.theta_range.1
    }

    fn target_box(&self, margin: f64) -> ((f64, f64), (f64, f64)) {
        let c = &self.cfg;
        (
            (c.target_opening.0 - margin, c.workspace_z.0 - margin),
            (c.target_opening.1 + margin, c.target_top + margin),
        )
    }

    fn over_opening(&self, y: f64) -> bool {
        y >= self.cfg.target_opening.0 && y <= self.cfg.target_opening.1
    }

    /// Height of the lowest leaf overlapping the opening, if any.
    pub fn lowest_leaf_over_opening(&self) -> Option<f64> {
        let (lo, hi) = self.cfg.target_opening;
        self.cfg
            .leaves
            .iter()
            .filter(|l| l.y.0 <= hi && l.y.1 >= lo)
            .map(|l| l.z)
            .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.min(z))))
    }

    /// Where water released at `(y, z)` ends up under the true geometry.
    pub fn water_lands_in_target(&self, y: f64, z: f64) -> bool {
        let blocked = self.cfg.leaves.iter().any(|l| l.z < z && l.solid_at(y));
        !blocked && self.over_opening(y) && z > self.cfg.target_top
    }

    /// First contact parameter along a translation under true geometry.
    fn first_contact(&self, p0: (f64, f64), p1: (f64, f64)) -> Option<f64> {
        let mut best: Option<f64> = None;
        let (dy, dz) = (p1.0 - p0.0, p1.1 - p0.1);
        if dz != 0.0 {
            for leaf in &self.cfg.leaves {
                let t = (leaf.z - p0.1) / dz;
                if t > 0.0 && t <= 1.0 && leaf.solid_at(p0.0 + t * dy) {
                    best = Some(best.map_or(t, |b: f64| b.min(t)));
                }
            }
        }
        let (lo, hi) = self.target_box(0.0);
        if let Some(t) = segment_box_entry(p0, p1, lo, hi) {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
        best
    }

    fn check_action(&self, s: &WaterState, a: &WaterAction) -> Result<(f64, f64, f64)> {
        let (y, z, theta) = a.desired(s);
        if !self.pose_in_workspace(y, z, theta) {
            return Err(Error::invalid(format!(
                "commanded pose ({y}, {z}, {theta}) is outside the workspace"
            )));
        }
        Ok((y, z, theta))
    }

    fn pour(&self, s: &mut WaterState, old_theta: f64, caught: impl Fn(f64, f64) -> bool) {
        let crosses = old_theta < self.cfg.pour_threshold && s.theta >= self.cfg.pour_threshold;
        if crosses && s.source_volume > 0 {
            s.source_volume -= 1;
            if caught(s.y, s.z) {
                s.target_volume += 1;
            } else {
                s.spilled += 1;
            }
        }
    }

    pub fn true_step(&self, s: &WaterState, a: &WaterAction) -> Result<WaterState> {
        let (y, z, theta) = self.check_action(s, a)?;
        match a {
            WaterAction::Translate { .. } => {
                let (p0, p1) = ((s.y, s.z), (y, z));
                let len = ((p1.0 - p0.0).powi(2) + (p1.1 - p0.1).powi(2)).sqrt();
                match self.first_contact(p0, p1) {
                    None => Ok(s.with_pose(y, z, s.theta)),
                    Some(t) => {
                        let t = (t - self.cfg.contact_backoff / len).max(0.0);
                        Ok(s.with_pose(p0.0 + t * (p1.0 - p0.0), p0.1 + t * (p1.1 - p0.1), s.theta))
                    }
                }
            }
            WaterAction::Rotate { .. } => {
                let mut next = s.with_pose(s.y, s.z, theta);
                self.pour(&mut next, s.theta, |y, z| self.water_lands_in_target(y, z));
                Ok(next)
            }
        }
    }

    pub fn model_step(&self, s: &WaterState, a: &WaterAction) -> Result<WaterState> {
        let (y, z, theta) = self.check_action(s, a)?;
        let mut next = s.with_pose(y, z, theta);
        if matches!(a, WaterAction::Rotate { .. }) {
            self.pour(&mut next, s.theta, |y, _| self.over_opening(y));
        }
        Ok(next)
    }

    pub fn pose_distance(&self, a: &WaterState, b: &WaterState) -> f64 {
        let dy = (a.y - b.y) / self.y_span();
        let dz = (a.z - b.z) / self.z_span();
        let dt = (a.theta - b.theta) / self.theta_span();
        (dy * dy + dz * dz + dt * dt).sqrt()
    }

    pub fn classify_trajectory(&self, t: &Trajectory<WaterState, WaterAction>) -> Result<TrajectoryType> {
        let states = t
            .executed_states
            .as_ref()
            .ok_or_else(|| Error::invalid("trajectory has not been executed"))?;
        let first = states.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
        let last = states.last().unwrap_or(first);
        let Some(pour_at) = states.windows(2).find(|w| w[1].source_volume < w[0].source_volume) else {
            return Ok(TrajectoryType::NoPour);
        };
        let below = self
            .lowest_leaf_over_opening()
            .is_none_or(|leaf_z| pour_at[0].z < leaf_z);
        let success = last.spilled == first.spilled;
        Ok(match (below, success) {
            (true, true) => TrajectoryType::BelowSuccess,
            (true, false) => TrajectoryType::BelowSpill,
            (false, true) => TrajectoryType::AboveSuccess,
            (false, false) => TrajectoryType::AboveSpill,
        })
    }

    fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
        rng.random_range(lo..=hi)
    }

    fn translate_toward(&self, from: &WaterState, y: f64, z: f64) -> Option<WaterAction> {
        let (dy, dz) = (y - from.y, z - from.z);
        let len = (dy * dy + dz * dz).sqrt();
        if len <= 1e-12 {
            return None;
        }
        let step = self.cfg.translation_step;
        if len <= step {
            Some(WaterAction::Translate { y, z })
        } else {
            let k = step / len;
            Some(WaterAction::Translate {
                y: from.y + k * dy,
                z: from.z + k * dz,
            })
        }
    }

    fn rotate_toward(&self, from: &WaterState, theta: f64) -> Option<WaterAction> {
        let d = theta - from.theta;
        if d.abs() <= 1e-9 {
            return None;
        }
        let step = self.cfg.rotation_step;
        Some(WaterAction::Rotate {
            theta: from.theta + d.clamp(-step, step),
        })
    }
}

impl Environment for WateringWorld {
    type State = WaterState;
    type Action = WaterAction;
    type Goal = WaterGoal;

    fn id(&self) -> &'static str {
        "watering"
    }

    fn featurizer(&self) -> String {
        if self.cfg.action_only_features {
            "watering-action".into()
        } else {
            "watering-state-action".into()
        }
    }

    fn feature_dim(&self) -> usize {
        if self.cfg.action_only_features {
            3
        } else {
            6
        }
    }

    fn features(&self, s: &WaterState, a: &WaterAction) -> Vec<f64> {
        let c = &self.cfg;
        let (y, z, theta) = a.desired(s);
        let ny = |v: f64| (v - c.workspace_y.0) / self.y_span();
        let nz = |v: f64| (v - c.workspace_z.0) / self.z_span();
        let nt = |v: f64| (v - c.theta_range.0) / self.theta_span();
        if c.action_only_features {
            return vec![ny(y), nz(z), nt(theta)];
        }
        vec![
            ny(s.y),
            nz(s.z),
            nt(s.theta),
            ((y - s.y) / self.y_span() + 1.0) / 2.0,
            ((z - s.z) / self.z_span() + 1.0) / 2.0,
            ((theta - s.theta) / self.theta_span() + 1.0) / 2.0,
        ]
    }

    fn true_step(&self, s: &WaterState, a: &WaterAction) -> Result<WaterState> {
        WateringWorld::true_step(self, s, a)
    }

    fn model_step(&self, s: &WaterState, a: &WaterAction) -> Result<WaterState> {
        WateringWorld::model_step(self, s, a)
    }

    /// Pose distance plus the mean absolute volume change of both containers.
    fn distance(&self, a: &WaterState, b: &WaterState) -> f64 {
        let dsrc = f64::from(a.source_volume.abs_diff(b.source_volume));
        let dtgt = f64::from(a.target_volume.abs_diff(b.target_volume));
        self.pose_distance(a, b) + (dsrc + dtgt) / 2.0
    }

    fn transition_allowed(&self, s: &WaterState, _a: &WaterAction, next: &WaterState) -> bool {
        if !self.state_valid(next) {
            return false;
        }
        let (lo, hi) = self.target_box(self.cfg.clearance);
        segment_box_entry((s.y, s.z), (next.y, next.z), lo, hi).is_none()
    }

    fn action_valid(&self, s: &WaterState, a: &WaterAction) -> bool {
        let Ok((y, z, _)) = self.check_action(s, a) else {
            return false;
        };
        let (lo, hi) = self.target_box(0.0);
        segment_box_entry((s.y, s.z), (y, z), lo, hi).is_none()
    }

    fn sample_problem(&self, rng: &mut StreamRng) -> Problem<Self> {
        let c = &self.cfg;
        let y = Self::uniform(rng, c.start_y);
        let z = Self::uniform(rng, c.start_z);
        PlanningProblem {
            env: self.id().to_string(),
            start: WaterState {
                y,
                z,
                theta: c.theta_range.0,
                source_volume: c.source_volume,
                target_volume: 0,
                spilled: 0,
            },
            goal: WaterGoal {
                min_target: c.goal_min_target,
                max_spilled: c.goal_max_spill,
            },
        }
    }

    fn goal_reached(&self, goal: &WaterGoal, s: &WaterState) -> bool {
        s.target_volume >= goal.min_target && s.spilled <= goal.max_spilled
    }

    fn state_valid(&self, s: &WaterState) -> bool {
        if !self.pose_in_workspace(s.y, s.z, s.theta) {
            return false;
        }
        let (lo, hi) = self.target_box(self.cfg.clearance);
        !(s.y >= lo.0 && s.y <= hi.0 && s.z >= lo.1 && s.z <= hi.1)
    }

    fn sample_state(&self, rng: &mut StreamRng) -> WaterState {
        let c = &self.cfg;
        WaterState {
            y: Self::uniform(rng, c.workspace_y),
            z: Self::uniform(rng, c.workspace_z),
            theta: Self::uniform(rng, c.theta_range),
            source_volume: c.source_volume,
            target_volume: 0,
            spilled: 0,
        }
    }

    /// A pour pose over the opening at a random height above the container.
    fn sample_goal_state(&self, problem: &Problem<Self>, rng: &mut StreamRng) -> WaterState {
        let c = &self.cfg;
        let margin = 0.1 * (c.target_opening.1 - c.target_opening.0);
        let z_lo = c.target_top + c.clearance + 1e-6;
        WaterState {
            y: Self::uniform(rng, (c.target_opening.0 + margin, c.target_opening.1 - margin)),
            z: Self::uniform(rng, (z_lo, c.workspace_z.1)),
            theta: c.pour_angle,
            ..problem.start.clone()
        }
    }

    fn planning_distance(&self, a: &WaterState, b: &WaterState) -> f64 {
        self.distance(a, b)
    }

    /// Goal-directed extensions translate first and rotate once the pose
    /// matches; random extensions pick the order at random.
    fn steer(
        &self,
        from: &WaterState,
        toward: &WaterState,
        goal_directed: bool,
        rng: &mut StreamRng,
    ) -> Vec<WaterAction> {
        let tr = self.translate_toward(from, toward.y, toward.z);
        let ro = self.rotate_toward(from, toward.theta);
        if goal_directed {
            return tr.or(ro).into_iter().collect();
        }
        let rotate_first = rng.random::<f64>() < self.cfg.rotate_probability;
        let (first, second) = if rotate_first { (ro, tr) } else { (tr, ro) };
        first.into_iter().chain(second).collect()
    }

    fn diversity_value(&self, t: &Trajectory<WaterState, WaterAction>) -> Option<f64> {
        let pour = t
            .states
            .windows(2)
            .find(|w| w[1].source_volume < w[0].source_volume)
            .map(|w| w[0].z);
        pour.or_else(|| t.states.last().map(|s| s.z))
    }

    fn diversity_bin_edges(&self) -> Vec<f64> {
        self.cfg.height_bin_edges.clone()
    }

    fn trajectory_label(&self, t: &Trajectory<WaterState, WaterAction>) -> Option<String> {
        self.classify_trajectory(t).ok().map(|c| c.as_str().to_string())
    }
}

/// Goal: at least `min_target` units caught with at most `max_spilled` lost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterGoal {
    pub min_target: u32,
    pub max_spilled: u32,
}
