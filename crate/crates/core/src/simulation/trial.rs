use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::world::{InterventionEvent, StepEvent, World};
use crate::dynamics::DubinsParams;
use crate::error::{Error, Result};
use crate::learning::SupervisorFit;
use crate::reachability::{signed_distance_payoff, solve_hji, KeepOutDisk, SolverSettings, ValueFunction};
use crate::supervisor::{judge, SupervisorParams};

/// Offset separating supervisor noise streams from world streams.
const SUPERVISOR_STREAM: u64 = 0x5eed_5afe_0000_0000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub seed: u64,
    pub ticks: u64,
    pub trips: u64,
    pub crashes: u64,
    pub interventions: u64,
    pub false_positives: u64,
    pub score: i64,
    pub intervention_log: Vec<InterventionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    /// True dynamics, true obstacle radius.
    Standard,
    /// The fitted library member.
    Learned,
    /// True dynamics, doubled obstacle radius.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    Zero,
    Mu,
    #[value(name = "mu2sigma")]
    #[serde(rename = "mu2sigma")]
    MuPlus2Sigma,
}

impl AlphaRule {
    pub fn level(self, fit: Option<&SupervisorFit>) -> Result<f64> {
        let need = || fit.ok_or_else(|| Error::InvalidArgument("this alpha rule needs a supervisor fit".into()));
        Ok(match self {
            AlphaRule::Zero => 0.0,
            AlphaRule::Mu => need()?.mu_hat(),
            AlphaRule::MuPlus2Sigma => {
                let f = need()?;
                f.mu_hat() + 2.0 * f.sigma_hat()
            }
        })
    }
}

/// The safe set and activation level every robot in a trial runs.
#[derive(Debug, Clone)]
pub struct Treatment {
    pub kind: TreatmentKind,
    pub vf: Arc<ValueFunction>,
    pub alpha: f64,
}

impl Treatment {
    /// Picks or solves the value function for `kind`.
    ///
    /// Standard reuses a library member with the true turn rate when one
    /// exists; Conservative is always solved at twice the obstacle radius.
    pub fn value_function(
        kind: TreatmentKind,
        library: &[Arc<ValueFunction>],
        fit: Option<&SupervisorFit>,
        dynamics: &DubinsParams,
        obstacle_radius: f64,
        settings: &SolverSettings,
    ) -> Result<Arc<ValueFunction>> {
        let grid = library
            .first()
            .map(|v| v.grid.clone())
            .ok_or_else(|| Error::InsufficientData("empty value-function library".into()))?;
        let solve = |radius: f64| -> Result<Arc<ValueFunction>> {
            let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(radius)?, &grid)?;
            let vf = solve_hji(&payoff, dynamics, settings)?;
            if !vf.converged {
                return Err(Error::NonConvergence {
                    omega_max: dynamics.omega_max,
                    residual: vf.residual,
                    t: settings.t_max,
                });
            }
            Ok(Arc::new(vf))
        };
        match kind {
            TreatmentKind::Standard => library
                .iter()
                .find(|v| (v.omega_max - dynamics.omega_max).abs() < 1e-9 && (v.obstacle_radius - obstacle_radius).abs() < 1e-9)
                .cloned()
                .map_or_else(|| solve(obstacle_radius), Ok),
            TreatmentKind::Learned => {
                let fit = fit.ok_or_else(|| Error::InvalidArgument("learned treatment needs a fit".into()))?;
                library
                    .get(fit.library_index())
                    .filter(|v| (v.omega_max - fit.omega_max()).abs() < 1e-9)
                    .cloned()
                    .ok_or_else(|| Error::Schema("fit does not match the supplied library".into()))
            }
            TreatmentKind::Conservative => solve(2.0 * obstacle_radius),
        }
    }
}

/// Anything that can decide on an obstacle removal once per tick.
pub trait SupervisorPolicy {
    fn act(&mut self, world: &World) -> Result<Option<u64>>;
}

/// The noisy idealized supervisor watching a whole team.
///
/// Each robot/obstacle pair gets one noise draw when the robot enters the
/// obstacle's relevance radius; the draw holds until it leaves. At most one
/// obstacle is removed per tick, the one judged most urgent.
#[derive(Debug, Clone)]
pub struct SimulatedSupervisor {
    pub params: SupervisorParams,
    rng: ChaCha8Rng,
    noise: BTreeMap<(usize, u64), f64>,
}

impl SimulatedSupervisor {
    pub fn new(params: SupervisorParams, seed: u64) -> Self {
        Self { params, rng: ChaCha8Rng::seed_from_u64(seed ^ SUPERVISOR_STREAM), noise: BTreeMap::new() }
    }
}

impl SupervisorPolicy for SimulatedSupervisor {
    fn act(&mut self, world: &World) -> Result<Option<u64>> {
        let radius = world.config.relevance_radius();
        let mut active = BTreeMap::new();
        let mut best: Option<(f64, u64)> = None;
        for robot in &world.robots {
            for ob in &world.obstacles {
                let d = (ob.disk.cx - robot.state.x).hypot(ob.disk.cy - robot.state.y);
                if d > radius {
                    continue;
                }
                let key = (robot.id, ob.id);
                let w = match self.noise.get(&key) {
                    Some(&w) => w,
                    None => self.params.draw_noise(&mut self.rng),
                };
                active.insert(key, w);
                let rel = robot.state.relative_to(ob.disk.cx, ob.disk.cy);
                if !judge(&self.params, &rel, w)?.intervene {
                    continue;
                }
                let urgency = self.params.vf.interpolate_value(&rel) + w - self.params.mu;
                let better = match best {
                    None => true,
                    Some((u, id)) => urgency < u || (urgency == u && ob.id < id),
                };
                if better {
                    best = Some((urgency, ob.id));
                }
            }
        }
        self.noise = active;
        Ok(best.map(|(_, id)| id))
    }
}

/// Replays removals at fixed ticks.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSupervisor {
    pub removals: Vec<(u64, u64)>,
}

impl ScriptedSupervisor {
    pub fn from_log(log: &[InterventionEvent]) -> Self {
        Self { removals: log.iter().map(|e| (e.tick, e.obstacle_id)).collect() }
    }
}

impl SupervisorPolicy for ScriptedSupervisor {
    fn act(&mut self, world: &World) -> Result<Option<u64>> {
        Ok(self.removals.iter().find(|(t, _)| *t == world.tick).map(|(_, id)| *id))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRobot {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub override_active: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceObstacle {
    pub id: u64,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// One line of the replay trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFrame {
    pub tick: u64,
    pub robots: Vec<TraceRobot>,
    pub obstacles: Vec<TraceObstacle>,
    pub events: Vec<StepEvent>,
}

impl TraceFrame {
    pub fn capture(world: &World, events: Vec<StepEvent>) -> Self {
        TraceFrame {
            tick: world.tick,
            robots: world
                .robots
                .iter()
                .map(|r| TraceRobot {
                    id: r.id,
                    x: r.state.x,
                    y: r.state.y,
                    theta: r.state.theta,
                    override_active: r.override_active,
                })
                .collect(),
            obstacles: world
                .obstacles
                .iter()
                .map(|o| TraceObstacle { id: o.id, cx: o.disk.cx, cy: o.disk.cy, r: o.disk.r })
                .collect(),
            events,
        }
    }
}

/// Runs one trial to completion, optionally writing a JSONL trace.
pub fn run_trial(
    config: &WorldConfig,
    treatment: &Treatment,
    supervisor: &mut dyn SupervisorPolicy,
    mut trace: Option<&mut dyn Write>,
) -> Result<TrialMetrics> {
    let mut world = World::new(config.clone(), treatment.vf.clone(), treatment.alpha)?;
    while !world.finished() {
        let action = supervisor.act(&world)?;
        let events = world.step(action)?;
        if let Some(out) = trace.as_deref_mut() {
            serde_json::to_writer(&mut *out, &TraceFrame::capture(&world, events))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(world.metrics())
}

/// Runs `n_trials` simulated-supervisor trials with seeds `seed, seed + 1, …`
/// in parallel. Results come back in seed order.
pub fn run_trials(
    config: &WorldConfig,
    treatment: &Treatment,
    supervisor: &SupervisorParams,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<TrialMetrics>> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = WorldConfig { seed: seed.wrapping_add(k), ..config.clone() };
            let mut sup = SimulatedSupervisor::new(supervisor.clone(), cfg.seed);
            run_trial(&cfg, treatment, &mut sup, None)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub trips: u64,
    pub crashes: u64,
    pub interventions: u64,
    pub false_positives: u64,
    pub score: i64,
}

/// Batch report written by the command line front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub treatment: TreatmentKind,
    pub alpha_rule: AlphaRule,
    pub alpha: f64,
    pub omega_max: f64,
    pub obstacle_radius: f64,
    pub totals: Totals,
    pub trials: Vec<TrialMetrics>,
}

impl TrialReport {
    pub fn new(treatment: &Treatment, alpha_rule: AlphaRule, trials: Vec<TrialMetrics>) -> Self {
        let totals = trials.iter().fold(Totals::default(), |t, m| Totals {
            trips: t.trips + m.trips,
            crashes: t.crashes + m.crashes,
            interventions: t.interventions + m.interventions,
            false_positives: t.false_positives + m.false_positives,
            score: t.score + m.score,
        });
        TrialReport {
            treatment: treatment.kind,
            alpha_rule,
            alpha: treatment.alpha,
            omega_max: treatment.vf.omega_max,
            obstacle_radius: treatment.vf.obstacle_radius,
            totals,
            trials,
        }
    }
}
