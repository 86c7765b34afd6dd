use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::protocol::{ClientMessage, EventKind, ObstacleFrame, Phase, PhaseParams, RobotFrame, ServerMessage};
use crate::dynamics::{rk4_step, State};
use crate::error::{Error, Result};
use crate::reachability::KeepOutDisk;
use crate::simulation::{AlphaRule, StepEvent, Treatment, TrialReport, World, WorldConfig};
use crate::supervisor::{generate_scene, InterventionRecord, SceneConfig};

/// A safe set offered to Phase III, with the rule that chose its level.
#[derive(Debug, Clone)]
pub struct TeamSetup {
    pub treatment: Treatment,
    pub alpha_rule: AlphaRule,
}

/// Everything a session needs, shared read-only between sessions.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub world: WorldConfig,
    /// Phase I length in ticks.
    pub drive_ticks: u64,
    pub scene: SceneConfig,
    pub scenes: usize,
    /// Ticks between a finished scene and the next one.
    pub scene_gap_ticks: u64,
    /// Phase III options; the first one is used unless the client asks for another.
    pub team: Vec<TeamSetup>,
}

impl SessionConfig {
    pub fn new(team: Vec<TeamSetup>) -> Self {
        SessionConfig {
            world: WorldConfig::default(),
            drive_ticks: 3600,
            scene: SceneConfig::default(),
            scenes: 10,
            scene_gap_ticks: 30,
            team,
        }
    }
}

/// Append-only destination for Phase II records.
#[derive(Debug)]
pub enum LogSink {
    Memory(Vec<InterventionRecord>),
    File { path: PathBuf, writer: BufWriter<File> },
}

impl LogSink {
    pub fn memory() -> Self {
        LogSink::Memory(Vec::new())
    }

    pub fn file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LogSink::File { path, writer: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &InterventionRecord) -> Result<()> {
        match self {
            LogSink::Memory(v) => v.push(record.clone()),
            LogSink::File { writer, .. } => {
                serde_json::to_writer(&mut *writer, record)?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            LogSink::Memory(_) => None,
            LogSink::File { path, .. } => Some(path),
        }
    }
}

#[derive(Debug)]
struct Drive {
    state: State,
    u: f64,
    tick: u64,
    duration: u64,
}

#[derive(Debug)]
struct Scenes {
    rng: ChaCha8Rng,
    total: usize,
    index: usize,
    tick: u64,
    robot: State,
    obstacle: KeepOutDisk,
    budget: u64,
    scene_tick: u64,
    closest: f64,
    /// Remaining gap ticks; while positive no scene is live.
    gap: u64,
    intervened: bool,
    done: bool,
}

#[derive(Debug)]
struct Team {
    world: World,
    setup: TeamSetup,
    pending: Option<u64>,
}

#[derive(Debug)]
enum Stage {
    Idle,
    Drive(Drive),
    Scenes(Box<Scenes>),
    Team(Box<Team>),
}

/// One client's run through the experiment.
///
/// The server tick is the only clock: messages act on the state of the tick
/// at which they are handled, and identical inputs at identical ticks give
/// identical logs.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    config: std::sync::Arc<SessionConfig>,
    stage: Stage,
    sink: LogSink,
    records: Vec<InterventionRecord>,
    report: Option<TrialReport>,
}

impl Session {
    pub fn new(id: impl Into<String>, config: std::sync::Arc<SessionConfig>, sink: LogSink) -> Self {
        Session { id: id.into(), config, stage: Stage::Idle, sink, records: Vec::new(), report: None }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self.stage {
            Stage::Idle => None,
            Stage::Drive(_) => Some(Phase::I),
            Stage::Scenes(_) => Some(Phase::II),
            Stage::Team(_) => Some(Phase::III),
        }
    }

    /// Tick counter of the current phase.
    pub fn tick(&self) -> u64 {
        match &self.stage {
            Stage::Idle => 0,
            Stage::Drive(d) => d.tick,
            Stage::Scenes(s) => s.tick,
            Stage::Team(t) => t.world.tick,
        }
    }

    pub fn finished(&self) -> bool {
        match &self.stage {
            Stage::Idle => false,
            Stage::Drive(d) => d.tick >= d.duration,
            Stage::Scenes(s) => s.done,
            Stage::Team(t) => t.world.finished(),
        }
    }

    /// Phase II records collected so far.
    pub fn records(&self) -> &[InterventionRecord] {
        &self.records
    }

    /// Report of a completed Phase III.
    pub fn report(&self) -> Option<&TrialReport> {
        self.report.as_ref()
    }

    pub fn sink(&self) -> &LogSink {
        &self.sink
    }

    /// Parses and applies one text frame. Malformed or out-of-phase messages
    /// come back as error messages and leave the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg).unwrap_or_else(|e| vec![ServerMessage::error(e.to_string())]),
            Err(e) => vec![ServerMessage::error(format!("malformed message: {e}"))],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>> {
        match msg {
            ClientMessage::StartPhase { phase, params } => self.start_phase(phase, params).map(|_| Vec::new()),
            ClientMessage::Control { u } => match &mut self.stage {
                Stage::Drive(d) => {
                    if !u.is_finite() {
                        return Err(Error::Protocol(format!("control must be finite, got {u}")));
                    }
                    d.u = self.config.world.dynamics().clamp_control(u);
                    Ok(Vec::new())
                }
                _ => Err(Error::Protocol("control is only accepted in phase I".into())),
            },
            ClientMessage::Intervene => match &mut self.stage {
                Stage::Scenes(s) => {
                    if s.done || s.gap > 0 || s.intervened {
                        return Ok(Vec::new());
                    }
                    s.intervened = true;
                    let record = InterventionRecord::new(s.robot, s.obstacle, self.id.clone(), s.tick);
                    self.sink.append(&record)?;
                    self.records.push(record.clone());
                    let mut ev = ServerMessage::event(EventKind::SceneEnd, s.tick);
                    if let ServerMessage::Event { scene, record: r, .. } = &mut ev {
                        *scene = Some(s.index);
                        *r = Some(record);
                    }
                    s.end_scene(self.config.scene_gap_ticks);
                    Ok(vec![ev])
                }
                _ => Err(Error::Protocol("intervene is only accepted in phase II".into())),
            },
            ClientMessage::Remove { obstacle_id } => match &mut self.stage {
                Stage::Team(t) => {
                    if t.world.finished() {
                        return Err(Error::Protocol("phase III is over".into()));
                    }
                    if t.world.obstacle(obstacle_id).is_none() {
                        return Err(Error::UnknownObstacle(obstacle_id));
                    }
                    if t.pending.is_some() {
                        return Err(Error::Protocol("one removal per tick".into()));
                    }
                    t.pending = Some(obstacle_id);
                    Ok(Vec::new())
                }
                _ => Err(Error::Protocol("remove is only accepted in phase III".into())),
            },
        }
    }

    fn start_phase(&mut self, phase: Phase, params: PhaseParams) -> Result<()> {
        let allowed = match (self.phase(), phase) {
            (None, _) => true,
            (Some(Phase::I), Phase::II) | (Some(Phase::II), Phase::III) => true,
            _ => false,
        };
        if !allowed {
            return Err(Error::Protocol(format!("cannot enter phase {phase:?} from {:?}", self.phase())));
        }
        let cfg = &self.config;
        let seed = params.seed.unwrap_or(cfg.world.seed);
        self.stage = match phase {
            Phase::I => Stage::Drive(Drive {
                state: State::new(cfg.world.width / 2.0, cfg.world.height / 2.0, 0.0),
                u: 0.0,
                tick: 0,
                duration: params.duration.unwrap_or(cfg.drive_ticks),
            }),
            Phase::II => {
                let total = params.scenes.unwrap_or(cfg.scenes);
                if total == 0 {
                    return Err(Error::InvalidArgument("phase II needs at least one scene".into()));
                }
                let mut s = Scenes {
                    rng: ChaCha8Rng::seed_from_u64(seed),
                    total,
                    index: 0,
                    tick: 0,
                    robot: State::new(0.0, 0.0, 0.0),
                    obstacle: KeepOutDisk::at_origin(cfg.scene.obstacle_radius)?,
                    budget: 0,
                    scene_tick: 0,
                    closest: f64::INFINITY,
                    gap: 0,
                    intervened: false,
                    done: false,
                };
                s.begin_scene(cfg)?;
                Stage::Scenes(Box::new(s))
            }
            Phase::III => {
                let setup = match params.treatment {
                    None => cfg.team.first(),
                    Some(kind) => cfg.team.iter().find(|t| t.treatment.kind == kind),
                }
                .cloned()
                .ok_or_else(|| match params.treatment {
                    Some(kind) => Error::InvalidArgument(format!("treatment {kind:?} is not loaded")),
                    None => Error::InvalidArgument("no phase III treatment is loaded".into()),
                })?;
                let mut world_cfg = WorldConfig { seed, ..cfg.world.clone() };
                if let Some(d) = params.duration {
                    world_cfg.trial_duration = d;
                }
                let world = World::new(world_cfg, setup.treatment.vf.clone(), setup.treatment.alpha)?;
                Stage::Team(Box::new(Team { world, setup, pending: None }))
            }
        };
        self.report = None;
        Ok(())
    }

    /// Advances one physics tick and returns the events it produced.
    pub fn step(&mut self) -> Result<Vec<ServerMessage>> {
        if self.finished() {
            return Ok(Vec::new());
        }
        let cfg = self.config.clone();
        let dynamics = cfg.world.dynamics();
        let dt = cfg.world.dt;
        match &mut self.stage {
            Stage::Idle => Ok(Vec::new()),
            Stage::Drive(d) => {
                let s = rk4_step(&d.state, d.u, dt, &dynamics);
                d.state = State::new(s.x.rem_euclid(cfg.world.width), s.y.rem_euclid(cfg.world.height), s.theta);
                d.tick += 1;
                Ok(Vec::new())
            }
            Stage::Scenes(s) => s.step(&cfg, dt),
            Stage::Team(t) => {
                let removal = t.pending.take();
                let events = t.world.step(removal)?;
                let tick = t.world.tick;
                let mut out: Vec<ServerMessage> = events.iter().map(|e| step_event_message(e, tick)).collect();
                if t.world.finished() {
                    let metrics = t.world.metrics();
                    self.report = Some(TrialReport::new(&t.setup.treatment, t.setup.alpha_rule, vec![metrics.clone()]));
                    let mut ev = ServerMessage::event(EventKind::SceneEnd, tick);
                    if let ServerMessage::Event { metrics: m, .. } = &mut ev {
                        *m = Some(metrics);
                    }
                    out.push(ev);
                }
                Ok(out)
            }
        }
    }

    /// The frame broadcast to the client.
    pub fn state_message(&self) -> ServerMessage {
        let dt = self.config.world.dt;
        let robot = |id: u64, s: &State| RobotFrame { x: s.x, y: s.y, theta: s.theta, id };
        let obstacle = |id: u64, d: &KeepOutDisk| ObstacleFrame { cx: d.cx, cy: d.cy, r: d.r, id };
        let (robots, obstacles, score, time_left) = match &self.stage {
            Stage::Idle => (Vec::new(), Vec::new(), 0, 0.0),
            Stage::Drive(d) => (vec![robot(0, &d.state)], Vec::new(), 0, d.duration.saturating_sub(d.tick) as f64 * dt),
            Stage::Scenes(s) => {
                if s.done || s.gap > 0 {
                    (Vec::new(), Vec::new(), 0, 0.0)
                } else {
                    let left = s.budget.saturating_sub(s.scene_tick) as f64 * dt;
                    (vec![robot(0, &s.robot)], vec![obstacle(s.index as u64, &s.obstacle)], 0, left)
                }
            }
            Stage::Team(t) => (
                t.world.robots.iter().map(|r| robot(r.id as u64, &r.state)).collect(),
                t.world.obstacles.iter().map(|o| obstacle(o.id, &o.disk)).collect(),
                t.world.score(),
                t.world.time_left(),
            ),
        };
        ServerMessage::State { phase: self.phase(), tick: self.tick(), robots, obstacles, score, time_left }
    }
}

impl Scenes {
    fn begin_scene(&mut self, cfg: &SessionConfig) -> Result<()> {
        let scene = generate_scene(&mut self.rng, &cfg.scene)?;
        let (cx, cy) = (cfg.world.width / 2.0, cfg.world.height / 2.0);
        self.obstacle = KeepOutDisk::new(cx, cy, scene.obstacle.r)?;
        self.robot = State::new(scene.robot.x + cx, scene.robot.y + cy, scene.robot.theta);
        let start = scene.robot.x.hypot(scene.robot.y);
        self.budget = (2.0 * start / cfg.world.speed / cfg.world.dt).ceil() as u64;
        self.scene_tick = 0;
        self.closest = f64::INFINITY;
        self.intervened = false;
        Ok(())
    }

    fn end_scene(&mut self, gap: u64) {
        self.index += 1;
        if self.index >= self.total {
            self.done = true;
        } else {
            self.gap = gap.max(1);
        }
    }

    fn step(&mut self, cfg: &SessionConfig, dt: f64) -> Result<Vec<ServerMessage>> {
        self.tick += 1;
        if self.gap > 0 {
            self.gap -= 1;
            if self.gap == 0 {
                self.begin_scene(cfg)?;
            }
            return Ok(Vec::new());
        }
        self.robot = rk4_step(&self.robot, 0.0, dt, &cfg.world.dynamics());
        self.scene_tick += 1;
        let d = self.obstacle.signed_distance(self.robot.x, self.robot.y);
        let mut out = Vec::new();
        let passed = if d <= 0.0 {
            let mut ev = ServerMessage::event(EventKind::Crash, self.tick);
            if let ServerMessage::Event { robot, obstacle_id, .. } = &mut ev {
                *robot = Some(0);
                *obstacle_id = Some(self.index as u64);
            }
            out.push(ev);
            true
        } else {
            let moving_away = d > self.closest;
            self.closest = self.closest.min(d);
            moving_away || self.scene_tick >= self.budget
        };
        if passed {
            let mut ev = ServerMessage::event(EventKind::SceneEnd, self.tick);
            if let ServerMessage::Event { scene, .. } = &mut ev {
                *scene = Some(self.index);
            }
            out.push(ev);
            self.end_scene(cfg.scene_gap_ticks);
        }
        Ok(out)
    }
}

fn step_event_message(e: &StepEvent, tick: u64) -> ServerMessage {
    let mut ev;
    match *e {
        StepEvent::Removal { obstacle_id: id, classification: c, .. } => {
            ev = ServerMessage::event(EventKind::Removal, tick);
            if let ServerMessage::Event { obstacle_id, classification, .. } = &mut ev {
                *obstacle_id = Some(id);
                *classification = Some(c);
            }
        }
        StepEvent::Crash { robot: r, obstacle_id: id } => {
            ev = ServerMessage::event(EventKind::Crash, tick);
            if let ServerMessage::Event { robot, obstacle_id, .. } = &mut ev {
                *robot = Some(r as u64);
                *obstacle_id = Some(id);
            }
        }
        StepEvent::Trip { robot: r } => {
            ev = ServerMessage::event(EventKind::Trip, tick);
            if let ServerMessage::Event { robot, .. } = &mut ev {
                *robot = Some(r as u64);
            }
        }
    }
    ev
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::learning::select_value_function;
    use crate::reachability::{Grid3, ValueFunction};
    use crate::simulation::{run_trial, SimulatedSupervisor, TreatmentKind};
    use crate::supervisor::SupervisorParams;

    fn flat(value: f64) -> Arc<ValueFunction> {
        let grid = Grid3::square(15.0, 7, 4).unwrap();
        Arc::new(ValueFunction::from_fn(grid, 1.0, 1.0, move |_, _, _| value).unwrap())
    }

    fn config() -> Arc<SessionConfig> {
        let treatment = Treatment { kind: TreatmentKind::Standard, vf: flat(100.0), alpha: 0.0 };
        let mut cfg = SessionConfig::new(vec![TeamSetup { treatment, alpha_rule: AlphaRule::Zero }]);
        cfg.world.trial_duration = 600;
        Arc::new(cfg)
    }

    fn session(id: &str) -> Session {
        Session::new(id, config(), LogSink::memory())
    }

    fn start(s: &mut Session, text: &str) {
        let replies = s.handle_text(text);
        assert!(replies.is_empty(), "{replies:?}");
    }

    /// Runs Phase II, pressing intervene `delay` ticks into every live scene.
    fn scripted_scenes(s: &mut Session, delay: u64) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        let mut live_for = 0;
        while !s.finished() {
            if matches!(s.state_message(), ServerMessage::State { ref robots, .. } if !robots.is_empty()) {
                if live_for == delay {
                    out.extend(s.handle_text(r#"{"type":"intervene"}"#));
                    // Duplicates are dropped silently.
                    assert!(s.handle_text(r#"{"type":"intervene"}"#).is_empty());
                }
                live_for += 1;
            } else {
                live_for = 0;
            }
            out.extend(s.step().unwrap());
        }
        out
    }

    #[test]
    fn malformed_and_out_of_phase_messages_are_errors() {
        let mut s = session("a");
        for text in ["not json", r#"{"type":"fly"}"#, r#"{"type":"control","u":1}"#, r#"{"type":"remove","obstacle_id":1}"#] {
            let r = s.handle_text(text);
            assert!(matches!(r.as_slice(), [ServerMessage::Error { .. }]), "{text}: {r:?}");
        }
        start(&mut s, r#"{"type":"start_phase","phase":"I","params":{"duration":10}}"#);
        assert!(matches!(s.handle_text(r#"{"type":"start_phase","phase":"III"}"#).as_slice(), [ServerMessage::Error { .. }]));
        assert_eq!(s.phase(), Some(Phase::I));
    }

    #[test]
    fn phase_one_holds_clamped_control() {
        let mut s = session("a");
        start(&mut s, r#"{"type":"start_phase","phase":"I","params":{"duration":120}}"#);
        s.handle_text(r#"{"type":"control","u":5.0}"#);
        for _ in 0..120 {
            s.step().unwrap();
        }
        assert!(s.finished());
        let ServerMessage::State { robots, time_left, .. } = s.state_message() else { panic!() };
        // Two seconds at the full unit turn rate.
        assert!((robots[0].theta - 2.0).abs() < 1e-9);
        assert_eq!(time_left, 0.0);
    }

    #[test]
    fn intervene_records_state_at_receipt_tick() {
        let mut s = session("a");
        start(&mut s, r#"{"type":"start_phase","phase":"II","params":{"scenes":1,"seed":3}}"#);
        for _ in 0..20 {
            s.step().unwrap();
        }
        let ServerMessage::State { robots, tick, .. } = s.state_message() else { panic!() };
        let replies = s.handle_text(r#"{"type":"intervene"}"#);
        let rec = &s.records()[0];
        assert_eq!(rec.tick, tick);
        assert_eq!((rec.absolute_state.x, rec.absolute_state.y), (robots[0].x, robots[0].y));
        assert!(matches!(&replies[..], [ServerMessage::Event { kind: EventKind::SceneEnd, record: Some(_), .. }]));
        assert!(s.finished());
    }

    #[test]
    fn no_input_means_no_records() {
        let mut s = session("a");
        start(&mut s, r#"{"type":"start_phase","phase":"II","params":{"scenes":4,"seed":1}}"#);
        let mut ends = 0;
        while !s.finished() {
            ends += s.step().unwrap().iter().filter(|m| matches!(m, ServerMessage::Event { kind: EventKind::SceneEnd, .. })).count();
        }
        assert_eq!(ends, 4);
        assert!(s.records().is_empty());
    }

    #[test]
    fn sessions_are_isolated_and_deterministic() {
        let mut a = session("a");
        let mut b = session("b");
        let mut solo = session("a");
        for s in [&mut a, &mut b, &mut solo] {
            start(s, r#"{"type":"start_phase","phase":"II","params":{"scenes":5,"seed":7}}"#);
        }
        // Interleave: b gets extra intervene presses and different timing.
        let mut ticks = 0;
        while !a.finished() {
            if ticks % 3 == 0 {
                b.handle_text(r#"{"type":"intervene"}"#);
            }
            b.step().unwrap();
            if ticks == 40 {
                a.handle_text(r#"{"type":"intervene"}"#);
                solo.handle_text(r#"{"type":"intervene"}"#);
            }
            a.step().unwrap();
            solo.step().unwrap();
            ticks += 1;
        }
        assert_eq!(a.records(), solo.records());
        assert_eq!(a.records().len(), 1);
        assert_ne!(a.records(), b.records());
    }

    #[test]
    fn phase_two_records_feed_the_fit() {
        let mut s = session("a");
        start(&mut s, r#"{"type":"start_phase","phase":"II","params":{"scenes":10,"seed":2}}"#);
        scripted_scenes(&mut s, 25);
        assert_eq!(s.records().len(), 10);
        let lib = vec![ValueFunction::from_fn(Grid3::square(15.0, 7, 4).unwrap(), 1.0, 1.0, |x, y, _| x.hypot(y) - 1.0).unwrap()];
        let fit = select_value_function(&lib, s.records(), None, false).unwrap();
        assert_eq!(fit.n_excluded, 0);
    }

    #[test]
    fn phase_three_removals_match_the_simulated_supervisor() {
        let cfg = config();
        let setup = &cfg.team[0];
        let sup = SupervisorParams::new(flat(0.0), 0.3, 0.0).unwrap();
        let world_cfg = WorldConfig { seed: 5, ..cfg.world.clone() };
        let mut simulated = SimulatedSupervisor::new(sup, 5);
        let expected = run_trial(&world_cfg, &setup.treatment, &mut simulated, None).unwrap();
        assert!(expected.interventions > 0);

        let mut s = session("c");
        start(&mut s, r#"{"type":"start_phase","phase":"III","params":{"seed":5}}"#);
        let mut removals = 0;
        while !s.finished() {
            if let Some(e) = expected.intervention_log.iter().find(|e| e.tick == s.tick()) {
                assert!(s.handle_text(&format!(r#"{{"type":"remove","obstacle_id":{}}}"#, e.obstacle_id)).is_empty());
            }
            removals += s
                .step()
                .unwrap()
                .iter()
                .filter(|m| matches!(m, ServerMessage::Event { kind: EventKind::Removal, .. }))
                .count();
        }
        assert_eq!(removals as u64, expected.interventions);
        assert_eq!(s.report().unwrap().trials[0], expected);
    }

    #[test]
    fn file_sink_appends_jsonl() {
        let dir = std::env::temp_dir().join(format!("safekernel-sink-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.jsonl");
        let _ = std::fs::remove_file(&path);
        let mut s = Session::new("f", config(), LogSink::file(&path).unwrap());
        start(&mut s, r#"{"type":"start_phase","phase":"II","params":{"scenes":3,"seed":4}}"#);
        scripted_scenes(&mut s, 10);
        let back = crate::supervisor::read_records(std::io::BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(back, s.records());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
