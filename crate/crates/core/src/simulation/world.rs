use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::trial::TrialMetrics;
use crate::dynamics::{rk4_step, wrap_angle, DubinsParams, State};
use crate::error::{Error, Result};
use crate::reachability::{KeepOutDisk, ValueFunction};
use crate::safety::{ObstacleView, SafetyPolicy};

/// Rejection samples allowed per obstacle placement.
pub const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u64,
    pub disk: KeepOutDisk,
}

#[derive(Debug, Clone)]
pub struct Robot {
    pub id: usize,
    pub state: State,
    pub goal: (f64, f64),
    pub policy: SafetyPolicy,
    /// Detection flag per obstacle slot.
    pub detected: Vec<bool>,
    pub trips: u64,
    pub override_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    FalsePositive,
    TruePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub tick: u64,
    pub obstacle_id: u64,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepEvent {
    Removal { obstacle_id: u64, replacement_id: u64, classification: Classification },
    Crash { robot: usize, obstacle_id: u64 },
    Trip { robot: usize },
}

/// Full state of one trial. Stepping is deterministic given the config seed.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub tick: u64,
    pub robots: Vec<Robot>,
    pub obstacles: Vec<Obstacle>,
    dynamics: DubinsParams,
    next_id: u64,
    rng: ChaCha8Rng,
    crashes: u64,
    interventions: u64,
    false_positives: u64,
    log: Vec<InterventionEvent>,
}

impl World {
    /// Spawns robots at their lane starts and scatters the obstacles.
    ///
    /// Every robot runs a [`SafetyPolicy`] on `vf` at level `alpha`.
    pub fn new(config: WorldConfig, vf: Arc<ValueFunction>, alpha: f64) -> Result<Self> {
        config.validate()?;
        let mut world = World {
            dynamics: config.dynamics(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            tick: 0,
            robots: Vec::new(),
            obstacles: Vec::new(),
            next_id: 0,
            crashes: 0,
            interventions: 0,
            false_positives: 0,
            log: Vec::new(),
        };
        let mut policy = SafetyPolicy::new(vf, alpha);
        policy.dt = world.config.dt;
        for id in 0..world.config.n_robots {
            let (state, goal) = world.lane_start(id);
            world.robots.push(Robot {
                id,
                state,
                goal,
                policy: policy.clone(),
                detected: Vec::new(),
                trips: 0,
                override_active: false,
            });
        }
        for _ in 0..world.config.n_obstacles {
            let disk = world.place_obstacle(0.0)?;
            let id = world.fresh_id();
            world.obstacles.push(Obstacle { id, disk });
            let p = world.config.detection_prob;
            for r in 0..world.robots.len() {
                let flag = world.rng.gen_bool(p);
                world.robots[r].detected.push(flag);
            }
        }
        Ok(world)
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn lane_start(&self, robot: usize) -> (State, (f64, f64)) {
        let c = &self.config;
        let y = c.lane_y(robot);
        (State::new(c.edge_margin, y, 0.0), (c.width - c.edge_margin, y))
    }

    /// Rejection-samples a disk clear of every obstacle and at least
    /// `standoff` from every robot.
    fn place_obstacle(&mut self, standoff: f64) -> Result<KeepOutDisk> {
        let c = &self.config;
        let r = c.obstacle_radius;
        let (x_lo, x_hi) = (c.spawn_margin, c.width - c.spawn_margin);
        let (y_lo, y_hi) = (r, c.height - r);
        let clearance = c.obstacle_clearance();
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x = self.rng.gen_range(x_lo..=x_hi);
            let y = self.rng.gen_range(y_lo..=y_hi);
            let far_from_obstacles = self
                .obstacles
                .iter()
                .all(|o| (o.disk.cx - x).hypot(o.disk.cy - y) >= clearance);
            let far_from_robots = self
                .robots
                .iter()
                .all(|rb| (rb.state.x - x).hypot(rb.state.y - y) >= standoff);
            if far_from_obstacles && far_from_robots {
                return KeepOutDisk::new(x, y, r);
            }
        }
        Err(Error::ArenaTooCrowded { what: "obstacle", attempts: PLACEMENT_ATTEMPTS })
    }

    pub fn dynamics(&self) -> &DubinsParams {
        &self.dynamics
    }

    pub fn obstacle(&self, id: u64) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    fn slot(&self, id: u64) -> Result<usize> {
        self.obstacles.iter().position(|o| o.id == id).ok_or(Error::UnknownObstacle(id))
    }

    /// Robots near enough to `obstacle` to matter: within the relevance
    /// radius and closing on it, or already within a turning radius of its edge.
    pub fn nearby_robots(&self, obstacle: &Obstacle) -> impl Iterator<Item = &Robot> + '_ {
        let disk = obstacle.disk;
        let radius = self.config.relevance_radius();
        let turn = self.config.turning_radius();
        self.robots.iter().filter(move |rb| {
            let (dx, dy) = (disk.cx - rb.state.x, disk.cy - rb.state.y);
            let d = dx.hypot(dy);
            let closing = dx * rb.state.theta.cos() + dy * rb.state.theta.sin() > 0.0;
            d <= radius && (closing || d - disk.r <= turn)
        })
    }

    /// False positive iff every nearby robot had detected the obstacle,
    /// including the case of no nearby robot at all.
    pub fn classify_intervention(&self, obstacle_id: u64) -> Result<Classification> {
        let slot = self.slot(obstacle_id)?;
        let all_detected = self.nearby_robots(&self.obstacles[slot]).all(|rb| rb.detected[slot]);
        Ok(if all_detected { Classification::FalsePositive } else { Classification::TruePositive })
    }

    fn nominal_control(&self, robot: &Robot) -> f64 {
        let s = robot.state;
        let desired = (robot.goal.1 - s.y).atan2(robot.goal.0 - s.x);
        self.dynamics.clamp_control(self.config.heading_gain * wrap_angle(desired - s.theta))
    }

    fn arrived(&self, robot: &Robot) -> bool {
        let (gx, gy) = robot.goal;
        let s = robot.state;
        let rightward = gx > self.config.width / 2.0;
        let crossed = if rightward { s.x >= gx } else { s.x <= gx };
        crossed || (s.x - gx).hypot(s.y - gy) <= self.config.capture_radius
    }

    /// Advances one tick. A removal, if any, is applied before the robots move.
    pub fn step(&mut self, removal: Option<u64>) -> Result<Vec<StepEvent>> {
        let mut events = Vec::new();
        if let Some(id) = removal {
            events.push(self.remove(id)?);
        }

        let dt = self.config.dt;
        for i in 0..self.robots.len() {
            let nominal = self.nominal_control(&self.robots[i]);
            let views: Vec<ObstacleView> = self
                .obstacles
                .iter()
                .zip(&self.robots[i].detected)
                .map(|(o, &detected)| ObstacleView { id: o.id, disk: o.disk, detected })
                .collect();
            let dynamics = self.dynamics;
            let robot = &mut self.robots[i];
            let out = robot.policy.filter_control(&robot.state, nominal, &views, &dynamics);
            robot.override_active = out.override_active;
            robot.state = rk4_step(&robot.state, out.u, dt, &dynamics);

            if let Some(hit) = self.obstacles.iter().find(|o| o.disk.contains(robot.state.x, robot.state.y)) {
                events.push(StepEvent::Crash { robot: i, obstacle_id: hit.id });
                self.crashes += 1;
                self.respawn_robot(i);
            } else if self.arrived(&self.robots[i]) {
                let gx = self.config.width - self.robots[i].goal.0;
                let gy = self.next_goal_y(i);
                let robot = &mut self.robots[i];
                robot.trips += 1;
                robot.goal = (gx, gy);
                events.push(StepEvent::Trip { robot: i });
            }
        }
        self.tick += 1;
        Ok(events)
    }

    fn next_goal_y(&mut self, robot: usize) -> f64 {
        let c = &self.config;
        if c.random_goals {
            let m = c.edge_margin;
            self.rng.gen_range(m..=c.height - m)
        } else {
            c.lane_y(robot)
        }
    }

    fn respawn_robot(&mut self, i: usize) {
        let (state, goal) = self.lane_start(i);
        let p = self.config.detection_prob;
        let flags: Vec<bool> = (0..self.obstacles.len()).map(|_| self.rng.gen_bool(p)).collect();
        let robot = &mut self.robots[i];
        robot.state = state;
        robot.goal = goal;
        robot.detected = flags;
        robot.policy.reset();
        robot.override_active = false;
    }

    fn remove(&mut self, id: u64) -> Result<StepEvent> {
        let slot = self.slot(id)?;
        let classification = self.classify_intervention(id)?;
        let disk = self.place_obstacle(self.config.respawn_standoff)?;
        let replacement_id = self.fresh_id();
        self.obstacles[slot] = Obstacle { id: replacement_id, disk };
        let p = self.config.detection_prob;
        for r in 0..self.robots.len() {
            let flag = self.rng.gen_bool(p);
            self.robots[r].detected[slot] = flag;
        }
        self.interventions += 1;
        if classification == Classification::FalsePositive {
            self.false_positives += 1;
        }
        self.log.push(InterventionEvent { tick: self.tick, obstacle_id: id, classification });
        Ok(StepEvent::Removal { obstacle_id: id, replacement_id, classification })
    }

    pub fn trips(&self) -> u64 {
        self.robots.iter().map(|r| r.trips).sum()
    }

    pub fn score(&self) -> i64 {
        let s = &self.config.score;
        s.trip_reward * self.trips() as i64
            - s.crash_cost * self.crashes as i64
            - s.removal_cost * self.interventions as i64
    }

    pub fn time_left(&self) -> f64 {
        self.config.trial_duration.saturating_sub(self.tick) as f64 * self.config.dt
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.config.trial_duration
    }

    pub fn metrics(&self) -> TrialMetrics {
        TrialMetrics {
            seed: self.config.seed,
            ticks: self.tick,
            trips: self.trips(),
            crashes: self.crashes,
            interventions: self.interventions,
            false_positives: self.false_positives,
            score: self.score(),
            intervention_log: self.log.clone(),
        }
    }
}
