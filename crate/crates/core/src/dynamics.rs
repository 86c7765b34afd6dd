//! Dubins-car dynamics with a bounded turn rate.
//!
//! The car moves at constant speed and steers with an angular rate
//! `u ∈ [-omega_max, omega_max]`:
//!
//! ```text
//! ẋ = speed · cos θ
//! ẏ = speed · sin θ
//! θ̇ = u
//! ```
//!
//! The avoidance game has no disturbance input, so the Hamiltonian reduces
//! to a maximisation over the control alone.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the control bound before a value is rejected.
const CONTROL_SLACK: f64 = 1e-9;

/// Physics tick used by the simulation and as the default integration step.
pub const DEFAULT_DT: f64 = 1.0 / 60.0;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DubinsParams {
    pub speed: f64,
    pub omega_max: f64,
}

impl DubinsParams {
    pub fn new(speed: f64, omega_max: f64) -> Result<Self> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidArgument(format!("speed must be positive, got {speed}")));
        }
        if !(omega_max >= 0.0 && omega_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "omega_max must be non-negative, got {omega_max}"
            )));
        }
        Ok(Self { speed, omega_max })
    }

    /// Fixed speed of 3 with the given turn-rate bound.
    pub fn with_omega(omega_max: f64) -> Self {
        Self { speed: 3.0, omega_max }
    }

    /// Radius of the tightest circle the car can drive.
    pub fn turning_radius(&self) -> f64 {
        if self.omega_max > 0.0 {
            self.speed / self.omega_max
        } else {
            f64::INFINITY
        }
    }

    pub fn clamp_control(&self, u: f64) -> f64 {
        u.clamp(-self.omega_max, self.omega_max)
    }
}

impl Default for DubinsParams {
    fn default() -> Self {
        Self::with_omega(1.0)
    }
}

/// Planar pose. `theta` is kept wrapped to `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    /// The same pose expressed relative to a point, heading unchanged.
    pub fn relative_to(&self, cx: f64, cy: f64) -> Self {
        Self { x: self.x - cx, y: self.y - cy, theta: self.theta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Spatial gradient of a value function at a state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl Costate {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Self { p1, p2, p3 }
    }

    pub fn norm(&self) -> f64 {
        (self.p1 * self.p1 + self.p2 * self.p2 + self.p3 * self.p3).sqrt()
    }
}

/// Time derivative of the state, `(ẋ, ẏ, θ̇)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl StateDerivative {
    pub fn dot(&self, p: &Costate) -> f64 {
        self.dx * p.p1 + self.dy * p.p2 + self.dtheta * p.p3
    }
}

pub fn flow(s: &State, u: f64, params: &DubinsParams) -> Result<StateDerivative> {
    if !u.is_finite() || u.abs() > params.omega_max + CONTROL_SLACK {
        return Err(Error::ControlBound { u, omega_max: params.omega_max });
    }
    Ok(unchecked_flow(s, u, params.speed))
}

#[inline]
fn unchecked_flow(s: &State, u: f64, speed: f64) -> StateDerivative {
    let (sin, cos) = s.theta.sin_cos();
    StateDerivative { dx: speed * cos, dy: speed * sin, dtheta: u }
}

/// One classical Runge-Kutta step with the control held over the step.
///
/// The control is clamped to the bound; callers that need the bound enforced
/// as an error go through [`flow`] first.
pub fn rk4_step(s: &State, u: f64, dt: f64, params: &DubinsParams) -> State {
    let u = params.clamp_control(u);
    let v = params.speed;
    let shift = |base: &State, k: &StateDerivative, h: f64| State {
        x: base.x + h * k.dx,
        y: base.y + h * k.dy,
        theta: base.theta + h * k.dtheta,
    };
    let k1 = unchecked_flow(s, u, v);
    let k2 = unchecked_flow(&shift(s, &k1, dt / 2.0), u, v);
    let k3 = unchecked_flow(&shift(s, &k2, dt / 2.0), u, v);
    let k4 = unchecked_flow(&shift(s, &k3, dt), u, v);
    State::new(
        s.x + dt / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        s.y + dt / 6.0 * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy),
        s.theta + dt / 6.0 * (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedState {
    pub t: f64,
    pub state: State,
}

pub type Trajectory = Vec<TimedState>;

/// Fixed-step RK4 rollout of a feedback policy.
///
/// Returns `⌊horizon / dt⌋ + 1` samples starting with `s0` at `t = 0`.
pub fn integrate<P>(
    s0: State,
    mut policy: P,
    dt: f64,
    horizon: f64,
    params: &DubinsParams,
) -> Result<Trajectory>
where
    P: FnMut(&State) -> f64,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be at least dt {dt}"
        )));
    }
    let steps = (horizon / dt + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = State::new(s0.x, s0.y, s0.theta);
    out.push(TimedState { t: 0.0, state: s });
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = policy(&s);
        if !u.is_finite() {
            return Err(Error::PolicyFault { t });
        }
        flow(&s, u, params)?;
        s = rk4_step(&s, u, dt, params);
        out.push(TimedState { t: (k + 1) as f64 * dt, state: s });
    }
    Ok(out)
}

/// Control that maximises the rate of change of the value: `omega_max · sign(p3)`.
///
/// `p3 == 0` resolves to a left turn.
pub fn optimal_avoid_control(p: &Costate, params: &DubinsParams) -> f64 {
    if p.p3 >= 0.0 {
        params.omega_max
    } else {
        -params.omega_max
    }
}

/// `max_u p · f(s, u)`; the disturbance set is `{0}` so there is no inner minimisation.
pub fn hamiltonian(s: &State, p: &Costate, params: &DubinsParams) -> f64 {
    let (sin, cos) = s.theta.sin_cos();
    params.speed * (p.p1 * cos + p.p2 * sin) + params.omega_max * p.p3.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn flow_examples() {
        let p = DubinsParams::with_omega(1.0);
        let d = flow(&State::new(0.0, 0.0, 0.0), 0.0, &p).unwrap();
        assert_eq!((d.dx, d.dy, d.dtheta), (3.0, 0.0, 0.0));

        let d = flow(&State::new(0.0, 0.0, FRAC_PI_2), 1.0, &p).unwrap();
        assert_abs_diff_eq!(d.dx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dy, 3.0, epsilon = 1e-12);
        assert_eq!(d.dtheta, 1.0);

        let d = flow(&State::new(5.0, -2.0, PI), -1.0, &p).unwrap();
        assert_abs_diff_eq!(d.dx, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.dy, 0.0, epsilon = 1e-12);
        assert_eq!(d.dtheta, -1.0);
    }

    #[test]
    fn flow_rejects_out_of_bound_control() {
        let p = DubinsParams::with_omega(1.0);
        assert!(matches!(
            flow(&State::new(0.0, 0.0, 0.0), 1.1, &p),
            Err(Error::ControlBound { .. })
        ));
        assert!(flow(&State::new(0.0, 0.0, 0.0), 1.0 + 1e-10, &p).is_ok());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.5), -0.5, epsilon = 1e-15);
        assert!(wrap_angle(-1e-18) < PI);
    }

    #[test]
    fn straight_line() {
        let p = DubinsParams::with_omega(1.0);
        let traj = integrate(State::new(0.0, 0.0, 0.0), |_| 0.0, DEFAULT_DT, 1.0, &p).unwrap();
        assert_eq!(traj.len(), 61);
        let last = traj.last().unwrap().state;
        assert_abs_diff_eq!(last.x, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(last.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn full_circle_returns_to_start() {
        let p = DubinsParams::with_omega(1.0);
        let dt = 2.0 * PI / 1000.0;
        let traj = integrate(State::new(0.0, 0.0, 0.0), |_| 1.0, dt, 2.0 * PI, &p).unwrap();
        let last = traj.last().unwrap();
        assert_abs_diff_eq!(last.t, 2.0 * PI, epsilon = 1e-9);
        assert_abs_diff_eq!(last.state.x, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(last.state.y, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(wrap_angle(last.state.theta), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn arc_matches_closed_form() {
        let p = DubinsParams::with_omega(1.0);
        let u = 0.5;
        let traj = integrate(State::new(0.0, 0.0, 0.0), |_| u, DEFAULT_DT, 2.0, &p).unwrap();
        for ts in &traj {
            // Closed-form arc for constant turn rate from the origin.
            let r = p.speed / u;
            let ex = r * (u * ts.t).sin();
            let ey = r * (1.0 - (u * ts.t).cos());
            assert_abs_diff_eq!(ts.state.x, ex, epsilon = 1e-6);
            assert_abs_diff_eq!(ts.state.y, ey, epsilon = 1e-6);
            assert_abs_diff_eq!(ts.state.theta, wrap_angle(u * ts.t), epsilon = 1e-9);
        }
    }

    #[test]
    fn integrate_errors() {
        let p = DubinsParams::with_omega(1.0);
        let s = State::new(0.0, 0.0, 0.0);
        assert!(matches!(
            integrate(s, |_| f64::NAN, 0.1, 1.0, &p),
            Err(Error::PolicyFault { .. })
        ));
        assert!(integrate(s, |_| 0.0, 0.0, 1.0, &p).is_err());
        assert!(integrate(s, |_| 0.0, 0.5, 0.1, &p).is_err());
    }

    #[test]
    fn optimal_control_sign_rule() {
        let p = DubinsParams::with_omega(1.0);
        assert_eq!(optimal_avoid_control(&Costate::new(0.0, 0.0, 0.5), &p), 1.0);
        assert_eq!(optimal_avoid_control(&Costate::new(0.0, 0.0, -2.0), &p), -1.0);
        assert_eq!(optimal_avoid_control(&Costate::new(0.0, 0.0, 0.0), &p), 1.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let p = DubinsParams::with_omega(1.0);
        assert_abs_diff_eq!(
            hamiltonian(&State::new(0.0, 0.0, 0.0), &Costate::new(1.0, 0.0, 0.0), &p),
            3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            hamiltonian(&State::new(0.0, 0.0, FRAC_PI_2), &Costate::new(0.0, -1.0, 0.0), &p),
            -3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            hamiltonian(&State::new(0.0, 0.0, 0.3), &Costate::new(0.0, 0.0, 2.0), &p),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn circle_center_distance_preserved() {
        let p = DubinsParams::with_omega(1.0);
        let dt = 0.05;
        let traj = integrate(State::new(1.0, 2.0, 0.4), |_| -1.0, dt, 20.0, &p).unwrap();
        // Right turn: center sits at heading − π/2.
        let s0 = traj[0].state;
        let r = p.turning_radius();
        let (cx, cy) = (s0.x + r * s0.theta.sin(), s0.y - r * s0.theta.cos());
        for w in traj.windows(2) {
            let d0 = ((w[0].state.x - cx).powi(2) + (w[0].state.y - cy).powi(2)).sqrt();
            let d1 = ((w[1].state.x - cx).powi(2) + (w[1].state.y - cy).powi(2)).sqrt();
            assert!((d1 - d0).abs() < 10.0 * dt.powi(4));
        }
    }

    proptest! {
        #[test]
        fn hamiltonian_is_max_over_controls(
            theta in -PI..PI,
            p1 in -5.0..5.0f64,
            p2 in -5.0..5.0f64,
            p3 in -5.0..5.0f64,
            omega in 0.0..3.0f64,
        ) {
            let params = DubinsParams::with_omega(omega);
            let s = State::new(0.0, 0.0, theta);
            let p = Costate::new(p1, p2, p3);
            let brute = (0..=100)
                .map(|i| -omega + 2.0 * omega * i as f64 / 100.0)
                .map(|u| flow(&s, u, &params).unwrap().dot(&p))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((hamiltonian(&s, &p, &params) - brute).abs() < 1e-9);
        }

        #[test]
        fn flow_lipschitz_bound(
            a in (-10.0..10.0f64, -10.0..10.0f64, -PI..PI),
            b in (-10.0..10.0f64, -10.0..10.0f64, -PI..PI),
            u in -1.0..1.0f64,
        ) {
            let params = DubinsParams::with_omega(1.0);
            let sa = State::new(a.0, a.1, a.2);
            let sb = State::new(b.0, b.1, b.2);
            let fa = flow(&sa, u, &params).unwrap();
            let fb = flow(&sb, u, &params).unwrap();
            let df = ((fa.dx - fb.dx).powi(2) + (fa.dy - fb.dy).powi(2) + (fa.dtheta - fb.dtheta).powi(2)).sqrt();
            let ds = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt();
            prop_assert!(df <= (params.speed + 1.0) * ds + 1e-12);
        }
    }
}
