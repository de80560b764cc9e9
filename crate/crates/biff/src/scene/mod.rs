//! Vectorized scene representation: agent tracks, road polylines and the
//! two-target interactive scene container, plus preprocessing, a synthetic
//! scenario generator and JSON-Lines I/O.

mod filter;
mod io;
mod prune;
mod synth;

pub use filter::{closest_future_distance, select_interactive_pairs};
pub use io::{read_scenes, read_scenes_from_str, write_scenes, write_scenes_to_string, SCENE_SCHEMA};
pub use prune::{local_region, prune_map, PruneRegion};
pub use synth::{generate_synthetic, GenConfig, Template};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{Pose2D, RigidTransform};

#[derive(Debug)]
pub enum SceneError {
    MissingTarget { id: u64 },
    DuplicateTarget { id: u64 },
    EmptyHistory { agent: u64 },
    InvalidCurrentStep { agent: u64 },
    EmptyFuture { agent: u64 },
    BadFootprint { agent: u64, radius: f64 },
    BadPolyline(String),
    UnknownTemplate(String),
    Parse { line: usize, msg: String },
    Io(std::io::Error),
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::MissingTarget { id } => write!(f, "target agent {id} not present in scene"),
            SceneError::DuplicateTarget { id } => write!(f, "target pair repeats agent {id}"),
            SceneError::EmptyHistory { agent } => write!(f, "agent {agent} has no history steps"),
            SceneError::InvalidCurrentStep { agent } => {
                write!(f, "agent {agent} current history step is not valid")
            }
            SceneError::EmptyFuture { agent } => write!(f, "agent {agent} has no valid future step"),
            SceneError::BadFootprint { agent, radius } => {
                write!(f, "agent {agent} footprint radius must be > 0, got {radius}")
            }
            SceneError::BadPolyline(msg) => write!(f, "bad road polyline: {msg}"),
            SceneError::UnknownTemplate(name) => write!(f, "unknown scenario template '{name}'"),
            SceneError::Parse { line, msg } => write!(f, "scene file line {line}: {msg}"),
            SceneError::Io(e) => write!(f, "scene i/o: {e}"),
        }
    }
}

impl std::error::Error for SceneError {}

impl From<std::io::Error> for SceneError {
    fn from(e: std::io::Error) -> Self {
        SceneError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub fn default_footprint_radius(&self) -> f64 {
        match self {
            AgentType::Vehicle => 1.0,
            AgentType::Pedestrian => 0.35,
            AgentType::Cyclist => 0.5,
        }
    }

    pub fn one_hot(&self) -> [f64; 3] {
        match self {
            AgentType::Vehicle => [1.0, 0.0, 0.0],
            AgentType::Pedestrian => [0.0, 1.0, 0.0],
            AgentType::Cyclist => [0.0, 0.0, 1.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
        }
    }
}

/// One observed history step: position, velocity, heading and a validity
/// flag. Invalid steps stay in place structurally; the encoder consumes the
/// flag as a feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FutureState {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub id: u64,
    #[serde(rename = "type")]
    pub kind: AgentType,
    /// Oldest first; the final entry is the current step and must be valid.
    pub history: Vec<HistoryState>,
    pub future_gt: Vec<FutureState>,
    pub footprint_radius: f64,
}

impl AgentTrack {
    pub fn current(&self) -> &HistoryState {
        self.history.last().expect("history is never empty on a validated track")
    }

    /// The agent's polyline frame: its pose at the current time step.
    pub fn frame(&self) -> Pose2D {
        let c = self.current();
        Pose2D::new(c.x, c.y, c.heading)
    }

    pub fn valid_future(&self) -> impl Iterator<Item = &FutureState> {
        self.future_gt.iter().filter(|s| s.valid)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.history.is_empty() {
            return Err(SceneError::EmptyHistory { agent: self.id });
        }
        if !self.current().valid {
            return Err(SceneError::InvalidCurrentStep { agent: self.id });
        }
        if self.footprint_radius <= 0.0 {
            return Err(SceneError::BadFootprint { agent: self.id, radius: self.footprint_radius });
        }
        Ok(())
    }

    pub fn apply_rigid(&self, g: &RigidTransform) -> AgentTrack {
        let history = self
            .history
            .iter()
            .map(|s| {
                let (x, y) = g.apply_point((s.x, s.y));
                let (vx, vy) = g.apply_vector((s.vx, s.vy));
                HistoryState { x, y, vx, vy, heading: g.apply_heading(s.heading), valid: s.valid }
            })
            .collect();
        let future_gt = self
            .future_gt
            .iter()
            .map(|s| {
                let (x, y) = g.apply_point((s.x, s.y));
                FutureState { x, y, valid: s.valid }
            })
            .collect();
        AgentTrack { id: self.id, kind: self.kind, history, future_gt, footprint_radius: self.footprint_radius }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Lane,
    Boundary,
    Crosswalk,
}

impl RoadType {
    pub fn one_hot(&self) -> [f64; 3] {
        match self {
            RoadType::Lane => [1.0, 0.0, 0.0],
            RoadType::Boundary => [0.0, 1.0, 0.0],
            RoadType::Crosswalk => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadPoint {
    pub x: f64,
    pub y: f64,
    /// Tangent direction at this point, radians.
    pub direction: f64,
    #[serde(rename = "type")]
    pub kind: RoadType,
}

pub const MAX_POLYLINE_POINTS: usize = 10;
pub const POLYLINE_SPACING: f64 = 1.0;
const SPACING_TOL: f64 = 1e-6;

/// Up to ten road points sampled at 1 m intervals (the final segment may be
/// shorter). The polyline's frame sits at its center point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolyline", into = "RawPolyline")]
pub struct RoadPolyline {
    points: Vec<RoadPoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolyline {
    points: Vec<RoadPoint>,
}

impl From<RoadPolyline> for RawPolyline {
    fn from(p: RoadPolyline) -> Self {
        RawPolyline { points: p.points }
    }
}

impl TryFrom<RawPolyline> for RoadPolyline {
    type Error = SceneError;
    fn try_from(raw: RawPolyline) -> Result<Self, SceneError> {
        RoadPolyline::new(raw.points)
    }
}

impl RoadPolyline {
    pub fn new(points: Vec<RoadPoint>) -> Result<Self, SceneError> {
        if points.is_empty() || points.len() > MAX_POLYLINE_POINTS {
            return Err(SceneError::BadPolyline(format!(
                "point count {} outside 1..={MAX_POLYLINE_POINTS}",
                points.len()
            )));
        }
        // 1 m spacing except the final segment, which may be shorter
        for (i, w) in points.windows(2).enumerate() {
            let d = ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt();
            let last = i + 2 == points.len();
            let ok = if last { d <= POLYLINE_SPACING + SPACING_TOL } else { (d - POLYLINE_SPACING).abs() <= SPACING_TOL };
            if !ok {
                return Err(SceneError::BadPolyline(format!("segment {i} spacing {d} violates 1 m sampling")));
            }
        }
        Ok(RoadPolyline { points })
    }

    pub fn points(&self) -> &[RoadPoint] {
        &self.points
    }

    /// The frame at the polyline center: the middle sampled point, oriented
    /// along its tangent.
    pub fn frame(&self) -> Pose2D {
        let mid = &self.points[(self.points.len() - 1) / 2];
        Pose2D::new(mid.x, mid.y, mid.direction)
    }

    pub fn apply_rigid(&self, g: &RigidTransform) -> RoadPolyline {
        let points = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = g.apply_point((p.x, p.y));
                RoadPoint { x, y, direction: g.apply_heading(p.direction), kind: p.kind }
            })
            .collect();
        RoadPolyline { points }
    }
}

/// A full interactive scenario: all agents, the road graph, and the ids of
/// the two interactive target agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    pub agents: Vec<AgentTrack>,
    pub roads: Vec<RoadPolyline>,
    pub target_pair: (u64, u64),
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let (a, b) = self.target_pair;
        if a == b {
            return Err(SceneError::DuplicateTarget { id: a });
        }
        for id in [a, b] {
            if !self.agents.iter().any(|t| t.id == id) {
                return Err(SceneError::MissingTarget { id });
            }
        }
        for t in &self.agents {
            t.validate()?;
        }
        Ok(())
    }

    pub fn track(&self, id: u64) -> Option<&AgentTrack> {
        self.agents.iter().find(|t| t.id == id)
    }

    /// The two target tracks, in target_pair order.
    pub fn targets(&self) -> Result<[&AgentTrack; 2], SceneError> {
        let a = self.track(self.target_pair.0).ok_or(SceneError::MissingTarget { id: self.target_pair.0 })?;
        let b = self.track(self.target_pair.1).ok_or(SceneError::MissingTarget { id: self.target_pair.1 })?;
        Ok([a, b])
    }

    /// Transform every global quantity in the scene by the same rigid motion.
    pub fn apply_rigid(&self, g: &RigidTransform) -> Scene {
        Scene {
            scene_id: self.scene_id.clone(),
            agents: self.agents.iter().map(|t| t.apply_rigid(g)).collect(),
            roads: self.roads.iter().map(|r| r.apply_rigid(g)).collect(),
            target_pair: self.target_pair,
            rng_seed: self.rng_seed,
        }
    }
}
