use serde::{Deserialize, Serialize};

use crate::dynamics::{DubinsParams, DEFAULT_DT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub trip_reward: i64,
    pub crash_cost: i64,
    pub removal_cost: i64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { trip_reward: 1, crash_cost: 10, removal_cost: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: f64,
    pub height: f64,
    pub n_robots: usize,
    pub n_obstacles: usize,
    pub obstacle_radius: f64,
    pub detection_prob: f64,
    pub score: ScoreConfig,
    pub dt: f64,
    /// Trial length in ticks.
    pub trial_duration: u64,
    pub seed: u64,
    /// Robot dynamics.
    pub speed: f64,
    pub omega_max: f64,
    /// Distance from the side edges to the lane start and goal points.
    pub edge_margin: f64,
    /// Obstacle centres stay at least this far from the side edges.
    pub spawn_margin: f64,
    /// Goal capture radius.
    pub capture_radius: f64,
    /// Proportional gain of the nominal heading controller.
    pub heading_gain: f64,
    /// Minimum distance from a respawned obstacle's centre to any robot.
    pub respawn_standoff: f64,
    /// Draw each trip's goal height uniformly along the far edge instead of
    /// keeping robots in fixed lanes.
    pub random_goals: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 60.0,
            height: 36.0,
            n_robots: 4,
            n_obstacles: 10,
            obstacle_radius: 1.0,
            detection_prob: 0.8,
            score: ScoreConfig::default(),
            dt: DEFAULT_DT,
            trial_duration: 3 * 60 * 60,
            seed: 0,
            speed: 3.0,
            omega_max: 1.0,
            edge_margin: 2.0,
            spawn_margin: 8.0,
            capture_radius: 1.0,
            heading_gain: 2.0,
            respawn_standoff: 8.0,
            random_goals: true,
        }
    }
}

impl WorldConfig {
    pub fn dynamics(&self) -> DubinsParams {
        DubinsParams { speed: self.speed, omega_max: self.omega_max }
    }

    pub fn turning_radius(&self) -> f64 {
        self.dynamics().turning_radius()
    }

    /// Minimum centre-to-centre obstacle distance: two radii plus a turning
    /// diameter between the edges.
    pub fn obstacle_clearance(&self) -> f64 {
        2.0 * self.obstacle_radius + 2.0 * self.turning_radius()
    }

    /// Radius around an obstacle inside which robots count as nearby: two
    /// turning diameters beyond its edge.
    pub fn relevance_radius(&self) -> f64 {
        self.obstacle_radius + 4.0 * self.turning_radius()
    }

    pub fn lane_y(&self, robot: usize) -> f64 {
        self.height * (robot as f64 + 0.5) / self.n_robots as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("arena {}x{} must be non-empty", self.width, self.height));
        }
        if self.n_robots == 0 {
            return bad("need at least one robot".into());
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return bad(format!("detection probability {} outside [0, 1]", self.detection_prob));
        }
        if 2 * self.score.removal_cost != self.score.crash_cost {
            return bad("removal cost must be half the crash cost".into());
        }
        if !(self.obstacle_radius > 0.0) || !(self.dt > 0.0) {
            return bad("obstacle radius and dt must be positive".into());
        }
        DubinsParams::new(self.speed, self.omega_max)?;
        if self.omega_max == 0.0 {
            return bad("robots must be able to turn".into());
        }
        if 2.0 * self.spawn_margin >= self.width || 2.0 * self.obstacle_radius >= self.height {
            return bad("arena too small for the spawn margins".into());
        }
        Ok(())
    }
}
