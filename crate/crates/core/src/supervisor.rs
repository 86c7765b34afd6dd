//! Noisy idealized supervisor.
//!
//! The supervisor holds an internal value function `V_S` and intervenes once a
//! robot reaches the `mu + w` level set of it, with `w ~ N(0, sigma²)` drawn
//! once per approach. Phase-II style data collection drives a robot straight
//! at an obstacle and records the state at the first triggered judgement.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, DubinsParams, State};
use crate::error::{Error, Result};
use crate::reachability::{KeepOutDisk, ValueFunction};

/// Regeneration attempts per scene before giving up.
const MAX_SCENE_RETRIES: usize = 100;

#[derive(Debug, Clone)]
pub struct SupervisorParams {
    pub vf: Arc<ValueFunction>,
    pub mu: f64,
    pub sigma: f64,
}

impl SupervisorParams {
    pub fn new(vf: Arc<ValueFunction>, mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be non-negative, got {mu}")));
        }
        Ok(Self { vf, mu, sigma })
    }

    /// One judgement-noise draw.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.sigma * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub intervene: bool,
    /// The state was outside the value grid and judged on the clamped value.
    pub out_of_domain: bool,
}

/// Intervene iff `V_S(s) + w ≤ mu`. `s` is in the obstacle frame.
pub fn judge(params: &SupervisorParams, s: &State, w: f64) -> Result<Judgement> {
    if !w.is_finite() {
        return Err(Error::InvalidArgument("judgement noise must be finite".into()));
    }
    let sample = params.vf.sample(s);
    Ok(Judgement { intervene: sample.value + w <= params.mu, out_of_domain: sample.out_of_domain })
}

/// An intervention, as logged by both synthetic and live sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub relative_state: State,
    pub obstacle: KeepOutDisk,
    pub absolute_state: State,
    pub session_id: String,
    pub tick: u64,
}

impl InterventionRecord {
    pub fn new(absolute_state: State, obstacle: KeepOutDisk, session_id: impl Into<String>, tick: u64) -> Self {
        Self {
            relative_state: absolute_state.relative_to(obstacle.cx, obstacle.cy),
            obstacle,
            absolute_state,
            session_id: session_id.into(),
            tick,
        }
    }
}

pub fn write_records<W: Write>(mut writer: W, records: &[InterventionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads JSON-lines records, skipping blank lines.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<InterventionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InterventionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("record on line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub obstacle_radius: f64,
    /// Spawn distance range from the obstacle centre.
    pub distance_range: (f64, f64),
    /// Half-width of the uniform heading perturbation, radians.
    pub heading_jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { obstacle_radius: 1.0, distance_range: (8.0, 14.0), heading_jitter: 15f64.to_radians() }
    }
}

/// A robot aimed (roughly) at an obstacle sitting at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub robot: State,
    pub obstacle: KeepOutDisk,
}

pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, config: &SceneConfig) -> Result<Scene> {
    let (lo, hi) = config.distance_range;
    if !(lo > config.obstacle_radius && hi >= lo) {
        return Err(Error::InvalidArgument(format!("bad approach distance range [{lo}, {hi}]")));
    }
    let obstacle = KeepOutDisk::at_origin(config.obstacle_radius)?;
    let bearing = rng.gen_range(-PI..PI);
    let distance = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let jitter = if config.heading_jitter > 0.0 {
        rng.gen_range(-config.heading_jitter..=config.heading_jitter)
    } else {
        0.0
    };
    let robot = State::new(distance * bearing.cos(), distance * bearing.sin(), bearing + PI + jitter);
    Ok(Scene { robot, obstacle })
}

/// Outcome of rolling one scene forward against a fixed noise draw.
enum Rollout {
    Triggered { state: State, tick: u64 },
    Passed,
}

fn roll_scene(params: &SupervisorParams, scene: &Scene, w: f64, dt: f64, dynamics: &DubinsParams) -> Result<Rollout> {
    let grid = &params.vf.grid;
    let max_ticks = (4.0 * grid.diameter() / dynamics.speed / dt).ceil() as u64;
    let mut s = scene.robot;
    for tick in 0..=max_ticks {
        let rel = s.relative_to(scene.obstacle.cx, scene.obstacle.cy);
        if !grid.contains_xy(rel.x, rel.y) {
            return Ok(Rollout::Passed);
        }
        if judge(params, &rel, w)?.intervene {
            return Ok(Rollout::Triggered { state: s, tick });
        }
        s = rk4_step(&s, 0.0, dt, dynamics);
    }
    Ok(Rollout::Passed)
}

/// Synthetic Phase-II data: one record per scene.
///
/// Scenes that pass the obstacle without a trigger are regenerated with a
/// fresh scene and noise draw, up to a hundred times.
pub fn collect_interventions<R: Rng + ?Sized>(
    params: &SupervisorParams,
    n_scenes: usize,
    rng: &mut R,
    dt: f64,
    scene_config: &SceneConfig,
    session_id: &str,
) -> Result<Vec<InterventionRecord>> {
    if n_scenes == 0 {
        return Err(Error::InvalidArgument("need at least one scene".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let dynamics = DubinsParams::default();
    let mut records = Vec::with_capacity(n_scenes);
    for scene_idx in 0..n_scenes {
        let mut recorded = false;
        for _ in 0..=MAX_SCENE_RETRIES {
            let scene = generate_scene(rng, scene_config)?;
            let w = params.draw_noise(rng);
            if let Rollout::Triggered { state, tick } = roll_scene(params, &scene, w, dt, &dynamics)? {
                records.push(InterventionRecord::new(state, scene.obstacle, session_id, tick));
                recorded = true;
                break;
            }
        }
        if !recorded {
            return Err(Error::SceneGeneration(format!(
                "scene {scene_idx} never triggered an intervention in {} attempts",
                MAX_SCENE_RETRIES + 1
            )));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reachability::Grid3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_supervisor(value: f64, mu: f64) -> SupervisorParams {
        let grid = Grid3::square(5.0, 11, 6).unwrap();
        let vf = ValueFunction::from_fn(grid, 1.0, 1.0, |_, _, _| value).unwrap();
        SupervisorParams::new(Arc::new(vf), mu, 0.0).unwrap()
    }

    #[test]
    fn judge_boundary_is_inclusive() {
        let s = State::new(0.0, 0.0, 0.0);
        assert!(judge(&constant_supervisor(0.29, 0.3), &s, 0.0).unwrap().intervene);
        assert!(!judge(&constant_supervisor(0.31, 0.3), &s, 0.0).unwrap().intervene);
        assert!(judge(&constant_supervisor(0.3, 0.3), &s, 0.0).unwrap().intervene);
        assert!(judge(&constant_supervisor(0.3, 0.3), &s, f64::NAN).is_err());
    }

    #[test]
    fn judge_flags_out_of_domain() {
        let j = judge(&constant_supervisor(1.0, 0.3), &State::new(50.0, 0.0, 0.0), 0.0).unwrap();
        assert!(j.out_of_domain);
        assert!(!j.intervene);
    }

    #[test]
    fn params_validation() {
        let vf = constant_supervisor(0.0, 0.0).vf;
        assert!(SupervisorParams::new(vf.clone(), -0.1, 0.1).is_err());
        assert!(SupervisorParams::new(vf, 0.1, -0.1).is_err());
    }

    #[test]
    fn scene_without_jitter_aims_at_obstacle() {
        let cfg = SceneConfig { obstacle_radius: 1.0, distance_range: (12.0, 12.0), heading_jitter: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scene = generate_scene(&mut rng, &cfg).unwrap();
            let s = scene.robot;
            assert!(((s.x * s.x + s.y * s.y).sqrt() - 12.0).abs() < 1e-9);
            // Heading points from the robot to the origin.
            let to_origin = (-s.y).atan2(-s.x);
            assert!(crate::dynamics::wrap_angle(to_origin - s.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&mut ChaCha8Rng::seed_from_u64(9), &cfg).unwrap();
        let b = generate_scene(&mut ChaCha8Rng::seed_from_u64(9), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_scenes_rejected() {
        let params = constant_supervisor(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(collect_interventions(&params, 0, &mut rng, 0.1, &SceneConfig::default(), "t").is_err());
    }

    #[test]
    fn never_triggering_supervisor_errors() {
        // Field far above mu everywhere: no scene can trigger.
        let grid = Grid3::square(20.0, 11, 6).unwrap();
        let vf = ValueFunction::from_fn(grid, 1.0, 1.0, |_, _, _| 5.0).unwrap();
        let params = SupervisorParams::new(Arc::new(vf), 0.3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = collect_interventions(&params, 1, &mut rng, 0.1, &SceneConfig::default(), "t").unwrap_err();
        assert!(matches!(err, Error::SceneGeneration(_)));
    }

    #[test]
    fn jsonl_roundtrip() {
        let disk = KeepOutDisk::new(3.0, -1.0, 1.0).unwrap();
        let recs = vec![
            InterventionRecord::new(State::new(5.0, 1.0, 0.2), disk, "s1", 10),
            InterventionRecord::new(State::new(-2.0, 0.5, -3.0), disk, "s1", 42),
        ];
        assert_eq!(recs[0].relative_state, State::new(2.0, 2.0, 0.2));
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        assert!(read_records("{\"nope\":1}\n".as_bytes()).is_err());
    }
}
