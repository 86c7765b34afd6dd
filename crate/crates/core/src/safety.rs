//! Minimally invasive safety filter.
//!
//! The nominal control passes through untouched while the robot is inside the
//! `alpha` super-level set of the composite value. Once it reaches the level
//! the filter latches onto the optimal avoidance control for the most
//! threatening detected obstacle and holds it until the value clears
//! `alpha + hysteresis`.
//!
//! Control is applied in discrete ticks and the value function is only known
//! on a grid, so the avoidance manoeuvre can lose a little value before it
//! starts to gain. The filter therefore also engages when the nominal step
//! would lead to a state from which the avoidance manoeuvre, rolled out for
//! `backup_horizon`, touches the level or a detected disk.

use std::sync::Arc;

use crate::dynamics::{optimal_avoid_control, rk4_step, DubinsParams, State, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::reachability::{KeepOutDisk, ValueFunction, AXIS_X, AXIS_Y};

/// An obstacle as seen by one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleView {
    pub id: u64,
    pub disk: KeepOutDisk,
    pub detected: bool,
}

#[derive(Debug, Clone)]
pub struct SafetyPolicy {
    pub vf: Arc<ValueFunction>,
    pub alpha: f64,
    pub hysteresis: f64,
    /// Latch: currently overriding the nominal control.
    pub engaged: bool,
    /// Length of the predicted avoidance rollout; zero checks the level only.
    pub backup_horizon: f64,
    /// Rollout step.
    pub dt: f64,
    /// Rollouts are skipped when the predicted value exceeds `alpha + backup_band`.
    pub backup_band: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub u: f64,
    pub override_active: bool,
    /// Composite value over detected obstacles, `+∞` when none are detected.
    pub value: f64,
    /// Obstacle attaining the composite minimum.
    pub threat: Option<u64>,
}

/// Minimum of the canonical value over `obstacles`, evaluated in each obstacle's frame.
///
/// Ties resolve to the lowest id.
pub fn composite_value<'a>(
    vf: &ValueFunction,
    s: &State,
    obstacles: impl IntoIterator<Item = &'a ObstacleView>,
) -> (f64, Option<&'a ObstacleView>) {
    let mut best: (f64, Option<&ObstacleView>) = (f64::INFINITY, None);
    for ob in obstacles {
        let v = vf.value_in_frame(s, &ob.disk).value;
        let better = match best.1 {
            None => true,
            Some(cur) => v < best.0 || (v == best.0 && ob.id < cur.id),
        };
        if better {
            best = (v, Some(ob));
        }
    }
    best
}

impl SafetyPolicy {
    /// Policy with the default hysteresis: `0.1 · |alpha|` plus one positional cell.
    pub fn new(vf: Arc<ValueFunction>, alpha: f64) -> Self {
        let cell = vf.grid.spacing(AXIS_X).max(vf.grid.spacing(AXIS_Y));
        let hysteresis = 0.1 * alpha.abs() + cell;
        let backup_band = vf.epsilon_grid();
        Self { vf, alpha, hysteresis, engaged: false, backup_horizon: 2.0, dt: DEFAULT_DT, backup_band }
    }

    pub fn with_hysteresis(mut self, hysteresis: f64) -> Result<Self> {
        if !(hysteresis >= 0.0) {
            return Err(Error::InvalidArgument(format!("hysteresis must be non-negative, got {hysteresis}")));
        }
        self.hysteresis = hysteresis;
        Ok(self)
    }

    pub fn with_backup_horizon(mut self, horizon: f64) -> Self {
        self.backup_horizon = horizon.max(0.0);
        self
    }

    pub fn release_level(&self) -> f64 {
        self.alpha + self.hysteresis
    }

    pub fn reset(&mut self) {
        self.engaged = false;
    }

    /// Filters one control decision. Only detected obstacles are considered.
    pub fn filter_control(
        &mut self,
        s: &State,
        nominal_u: f64,
        obstacles: &[ObstacleView],
        params: &DubinsParams,
    ) -> FilterOutput {
        let nominal_u = params.clamp_control(nominal_u);
        let detected = || obstacles.iter().filter(|o| o.detected);
        let (value, threat) = composite_value(&self.vf, s, detected());
        let Some(threat) = threat else {
            self.engaged = false;
            return FilterOutput { u: nominal_u, override_active: false, value, threat: None };
        };

        if self.engaged && value > self.release_level() {
            self.engaged = false;
        }
        if !self.engaged {
            self.engaged = value <= self.alpha
                || (self.backup_horizon > 0.0 && !self.backup_clears(s, nominal_u, obstacles, params));
        }
        if !self.engaged {
            return FilterOutput { u: nominal_u, override_active: false, value, threat: Some(threat.id) };
        }
        FilterOutput {
            u: self.avoid_control(s, threat, params),
            override_active: true,
            value,
            threat: Some(threat.id),
        }
    }

    fn avoid_control(&self, s: &State, threat: &ObstacleView, params: &DubinsParams) -> f64 {
        let rel = s.relative_to(threat.disk.cx, threat.disk.cy);
        optimal_avoid_control(&self.vf.interpolate_gradient(&rel), params)
    }

    /// Whether one nominal step followed by the avoidance manoeuvre keeps the
    /// composite value above `alpha`, and the robot out of every detected
    /// disk, for the whole backup horizon.
    pub fn backup_clears(&self, s: &State, nominal_u: f64, obstacles: &[ObstacleView], params: &DubinsParams) -> bool {
        let detected = || obstacles.iter().filter(|o| o.detected);
        let inside = |x: &State| detected().any(|o| o.disk.contains(x.x, x.y));
        let mut x = rk4_step(s, nominal_u, self.dt, params);
        let (v, mut threat) = composite_value(&self.vf, &x, detected());
        if v <= self.alpha || inside(&x) {
            return false;
        }
        if v > self.alpha + self.backup_band {
            return true;
        }
        let steps = (self.backup_horizon / self.dt).ceil() as usize;
        for _ in 0..steps {
            let Some(t) = threat else { return true };
            x = rk4_step(&x, self.avoid_control(&x, t, params), self.dt, params);
            let (v, next) = composite_value(&self.vf, &x, detected());
            if v <= self.alpha || inside(&x) {
                return false;
            }
            threat = next;
        }
        true
    }
}

/// Closed-loop rollout of the filter around a nominal policy.
///
/// True iff the composite value over *all* obstacles stays above
/// `alpha - epsilon_grid` at every tick up to `horizon`.
pub fn closed_loop_safe<P>(
    policy: &mut SafetyPolicy,
    s0: State,
    mut nominal: P,
    obstacles: &[ObstacleView],
    horizon: f64,
    dt: f64,
    params: &DubinsParams,
) -> Result<bool>
where
    P: FnMut(&State) -> f64,
{
    let all_value = |vf: &ValueFunction, s: &State| composite_value(vf, s, obstacles.iter()).0;
    let detected_value = composite_value(&policy.vf, &s0, obstacles.iter().filter(|o| o.detected)).0;
    if !(detected_value > policy.alpha) {
        return Err(Error::InvalidArgument("initial state must start above the activation level".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let floor = policy.alpha - policy.vf.epsilon_grid();
    let steps = (horizon / dt).ceil() as usize;
    let mut s = s0;
    for _ in 0..steps {
        let out = policy.filter_control(&s, nominal(&s), obstacles, params);
        s = rk4_step(&s, out.u, dt, params);
        if all_value(&policy.vf, &s) <= floor {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reachability::Grid3;

    /// `V = x + p3·θ`: a field with a fixed heading derivative.
    fn tilted_field(p3: f64) -> Arc<ValueFunction> {
        let grid = Grid3::square(10.0, 41, 24).unwrap();
        Arc::new(ValueFunction::from_fn(grid, 1.0, 1.0, move |x, _, t| x + p3 * t).unwrap())
    }

    fn view(id: u64, cx: f64, detected: bool) -> ObstacleView {
        ObstacleView { id, disk: KeepOutDisk::new(cx, 0.0, 1.0).unwrap(), detected }
    }

    #[test]
    fn no_detected_obstacles_passes_nominal() {
        let mut policy = SafetyPolicy::new(tilted_field(0.0), 0.0);
        let p = DubinsParams::default();
        let out = policy.filter_control(&State::new(0.0, 0.0, 0.0), 0.3, &[], &p);
        assert_eq!((out.u, out.override_active), (0.3, false));
        assert_eq!(out.value, f64::INFINITY);
        let out = policy.filter_control(&State::new(0.0, 0.0, 0.0), 0.3, &[view(1, 0.0, false)], &p);
        assert_eq!((out.u, out.override_active), (0.3, false));
    }

    #[test]
    fn engages_below_alpha_with_sign_rule() {
        let mut policy = SafetyPolicy::new(tilted_field(-0.4), 1.0).with_backup_horizon(0.0);
        let p = DubinsParams::default();
        // Relative state (0.99, 0, 0): V = 0.99 = alpha - 0.01, ∂V/∂θ = -0.4.
        let out = policy.filter_control(&State::new(0.99, 0.0, 0.0), 0.2, &[view(1, 0.0, true)], &p);
        assert!(out.override_active);
        assert_eq!(out.u, -1.0);
    }

    #[test]
    fn hysteresis_latch() {
        let mut policy = SafetyPolicy::new(tilted_field(0.0), 1.0)
            .with_hysteresis(0.5)
            .unwrap()
            .with_backup_horizon(0.0);
        let p = DubinsParams::default();
        let obs = [view(1, 0.0, true)];
        assert!(policy.filter_control(&State::new(0.9, 0.0, 0.0), 0.0, &obs, &p).override_active);
        // alpha + hysteresis / 2: still latched.
        assert!(policy.filter_control(&State::new(1.25, 0.0, 0.0), 0.0, &obs, &p).override_active);
        // Above the release level: back to nominal.
        let out = policy.filter_control(&State::new(1.6, 0.0, 0.0), 0.3, &obs, &p);
        assert!(!out.override_active);
        assert_eq!(out.u, 0.3);
    }

    #[test]
    fn backup_engages_before_the_level() {
        let mut policy = SafetyPolicy::new(tilted_field(0.0), 1.0);
        let p = DubinsParams::default();
        // V = x decreases by 3·dt = 0.05 per tick heading in -x.
        let s = State::new(1.03, 0.0, std::f64::consts::PI);
        let out = policy.filter_control(&s, 0.0, &[view(1, 0.0, true)], &p);
        assert!(out.override_active);
    }

    #[test]
    fn backup_engages_when_the_manoeuvre_would_touch_a_disk() {
        // A flat field never reaches the level, so only the contact check can fire.
        let grid = Grid3::square(10.0, 41, 24).unwrap();
        let vf = Arc::new(ValueFunction::from_fn(grid, 1.0, 1.0, |_, _, _| 0.5).unwrap());
        let mut policy = SafetyPolicy::new(vf, 0.0);
        policy.backup_band = 1.0;
        let p = DubinsParams::default();
        let obs = [view(1, 0.0, true)];
        let far = State::new(-8.0, 0.0, std::f64::consts::PI);
        assert!(!policy.filter_control(&far, 0.0, &obs, &p).override_active);
        let near = State::new(-1.5, 0.0, 0.0);
        assert!(policy.filter_control(&near, 0.0, &obs, &p).override_active);
    }

    #[test]
    fn argmin_obstacle_ties_break_by_id() {
        let vf = tilted_field(0.0);
        let obs = [view(7, 0.0, true), view(3, 0.0, true)];
        let (_, threat) = composite_value(&vf, &State::new(2.0, 0.0, 0.0), obs.iter());
        assert_eq!(threat.unwrap().id, 3);
    }

    #[test]
    fn output_is_bounded() {
        let mut policy = SafetyPolicy::new(tilted_field(5.0), 100.0);
        let p = DubinsParams::with_omega(0.7);
        for u in [-3.0, -0.7, 0.0, 0.7, 3.0] {
            let out = policy.filter_control(&State::new(0.0, 0.0, 1.0), u, &[view(1, 0.0, true)], &p);
            assert!(out.u.abs() <= 0.7);
        }
    }

    #[test]
    fn closed_loop_empty_obstacles_is_safe() {
        let mut policy = SafetyPolicy::new(tilted_field(0.0), 0.0);
        let p = DubinsParams::default();
        assert!(closed_loop_safe(&mut policy, State::new(0.0, 0.0, 0.0), |_| 0.5, &[], 5.0, DEFAULT_DT, &p).unwrap());
    }

    #[test]
    fn closed_loop_requires_start_above_alpha() {
        let mut policy = SafetyPolicy::new(tilted_field(0.0), 5.0);
        let p = DubinsParams::default();
        let obs = [view(1, 0.0, true)];
        assert!(closed_loop_safe(&mut policy, State::new(1.0, 0.0, 0.0), |_| 0.0, &obs, 1.0, DEFAULT_DT, &p).is_err());
    }
}
