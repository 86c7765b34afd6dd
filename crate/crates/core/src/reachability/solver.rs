//! Infinite-horizon avoid value function by pseudo-time marching.
//!
//! Each step evaluates a first-order Lax-Friedrichs numerical Hamiltonian
//! from one-sided differences (periodic in θ, extrapolated at the x/y edges)
//! and applies the variational-inequality bound:
//!
//! ```text
//! V ← min(l, V + Δt · Ĥ(x, ∇⁻V, ∇⁺V))
//! ```
//!
//! Dissipation coefficients are the per-node bounds `|∂H/∂p_i|`, i.e.
//! `speed·|cos θ|`, `speed·|sin θ|` and `omega_max`.

use rayon::prelude::*;

use super::grid::{AXIS_THETA, AXIS_X, AXIS_Y};
use super::value::ValueFunction;
use crate::dynamics::DubinsParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Fraction of the CFL-limited step.
    pub cfl: f64,
    /// Residual threshold on `max|ΔV| / Δt`. `None` means `1e-3 ·` payoff range.
    pub tol: Option<f64>,
    /// Pseudo-time cap.
    pub t_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { cfl: 0.9, tol: None, t_max: 20.0 }
    }
}

/// Marches the payoff to a stationary value function.
///
/// A run that hits `t_max` first is returned with `converged == false`.
pub fn solve_hji(payoff: &ValueFunction, params: &DubinsParams, settings: &SolverSettings) -> Result<ValueFunction> {
    if !(settings.cfl > 0.0 && settings.cfl <= 1.0) {
        return Err(Error::CflViolation(settings.cfl));
    }
    if !(params.omega_max >= 0.0) {
        return Err(Error::InvalidArgument("omega_max must be non-negative".into()));
    }
    if !(settings.t_max > 0.0) {
        return Err(Error::InvalidArgument("t_max must be positive".into()));
    }
    let grid = payoff.grid.clone();
    let l = payoff.values.clone();
    let tol = settings
        .tol
        .unwrap_or_else(|| 1e-3 * (payoff.max_value() - payoff.min_value()).max(f64::EPSILON));

    let [nx, ny, nt] = grid.dims;
    let inv_hx = 1.0 / grid.spacing(AXIS_X);
    let inv_hy = 1.0 / grid.spacing(AXIS_Y);
    let inv_ht = 1.0 / grid.spacing(AXIS_THETA);
    let trig: Vec<(f64, f64)> = (0..nt).map(|it| grid.coord(AXIS_THETA, it).sin_cos()).collect();
    let speed = params.speed;
    let omega = params.omega_max;

    let rate_bound = trig
        .iter()
        .map(|&(s, c)| speed * c.abs() * inv_hx + speed * s.abs() * inv_hy + omega * inv_ht)
        .fold(0.0, f64::max);
    let dt = settings.cfl / rate_bound;

    let slab = ny * nt;
    let mut cur = l.clone();
    let mut next = vec![0.0; cur.len()];
    let mut t = 0.0;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    while t < settings.t_max {
        next.par_chunks_mut(slab).enumerate().for_each(|(ix, out)| {
            let base = ix * slab;
            for iy in 0..ny {
                for it in 0..nt {
                    let idx = base + iy * nt + it;
                    let v = cur[idx];

                    let (pxm, pxp) = if ix == 0 {
                        let d = (cur[idx + slab] - v) * inv_hx;
                        (d, d)
                    } else if ix == nx - 1 {
                        let d = (v - cur[idx - slab]) * inv_hx;
                        (d, d)
                    } else {
                        ((v - cur[idx - slab]) * inv_hx, (cur[idx + slab] - v) * inv_hx)
                    };

                    let (pym, pyp) = if iy == 0 {
                        let d = (cur[idx + nt] - v) * inv_hy;
                        (d, d)
                    } else if iy == ny - 1 {
                        let d = (v - cur[idx - nt]) * inv_hy;
                        (d, d)
                    } else {
                        ((v - cur[idx - nt]) * inv_hy, (cur[idx + nt] - v) * inv_hy)
                    };

                    let prev_t = if it == 0 { idx + nt - 1 } else { idx - 1 };
                    let next_t = if it == nt - 1 { idx + 1 - nt } else { idx + 1 };
                    let ptm = (v - cur[prev_t]) * inv_ht;
                    let ptp = (cur[next_t] - v) * inv_ht;

                    let (s, c) = trig[it];
                    let ham = speed * (c * 0.5 * (pxm + pxp) + s * 0.5 * (pym + pyp))
                        + omega * (0.5 * (ptm + ptp)).abs();
                    let dissipation = 0.5
                        * (speed * c.abs() * (pxp - pxm) + speed * s.abs() * (pyp - pym) + omega * (ptp - ptm));
                    out[iy * nt + it] = (v + dt * (ham + dissipation)).min(l[idx]);
                }
            }
        });

        let max_change = cur
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut cur, &mut next);
        t += dt;
        iterations += 1;
        residual = max_change / dt;
        if residual < tol {
            break;
        }
    }

    Ok(ValueFunction {
        grid,
        values: cur,
        omega_max: params.omega_max,
        obstacle_radius: payoff.obstacle_radius,
        converged: residual < tol,
        residual,
        iterations,
    })
}
