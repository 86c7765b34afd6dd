//! The team supervision task.
//!
//! A few robots shuttle back and forth across an arena strewn with obstacles.
//! Each robot sees each obstacle only with some probability, and a supervisor
//! (simulated or live) may remove obstacles at a cost. Removals of obstacles
//! that every nearby robot had already seen are false positives.

mod config;
mod trial;
mod world;

pub use config::{ScoreConfig, WorldConfig};
pub use trial::{
    run_trial, run_trials, AlphaRule, ScriptedSupervisor, SimulatedSupervisor, SupervisorPolicy, Totals, TraceFrame,
    TraceObstacle, TraceRobot,
    Treatment, TreatmentKind, TrialMetrics, TrialReport,
};
pub use world::{
    Classification, InterventionEvent, Obstacle, Robot, StepEvent, World, PLACEMENT_ATTEMPTS,
};
