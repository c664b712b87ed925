//! Line-delimited JSON state messages shared by the CLI stream output and
//! the teleoperation service.

use serde::{Deserialize, Serialize};

use crate::obstacles::ObstacleMap;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub position: [f64; 2],
    pub reference: [f64; 2],
    pub mean: [f64; 2],
    /// `[xx, xy, yy]`.
    pub covariance: [f64; 3],
    pub radius: f64,
    pub eta: [f64; 5],
    pub constraint_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub bound: f64,
    pub active: bool,
}

/// `{"v":1,"type":"state",...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub tick: u64,
    pub time_s: f64,
    pub robots: Vec<RobotState>,
    pub pairs: Vec<PairState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<ObstacleMap>,
}

impl StateSnapshot {
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.robots.len().max(1) as f64;
        let (x, y) = self.robots.iter().fold((0.0, 0.0), |(x, y), r| {
            (x + r.position[0], y + r.position[1])
        });
        [x / n, y / n]
    }

    pub fn with_obstacles(mut self, obstacles: &ObstacleMap) -> Self {
        self.obstacles = Some(obstacles.clone());
        self
    }
}
