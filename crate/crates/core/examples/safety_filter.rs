//! Drive straight at an obstacle with and without the safety filter seeing it.
//!
//! ```text
//! cargo run --release --example safety_filter
//! ```

use std::sync::Arc;

use safekernel::dynamics::{rk4_step, DubinsParams, State, DEFAULT_DT};
use safekernel::reachability::{signed_distance_payoff, solve_hji, Grid3, KeepOutDisk, SolverSettings};
use safekernel::safety::{ObstacleView, SafetyPolicy};

pub fn run() -> safekernel::Result<()> {
    let dynamics = DubinsParams::with_omega(1.0);
    let grid = Grid3::square(15.0, 61, 36)?;
    let disk = KeepOutDisk::new(10.0, 0.5, 1.0)?;
    let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(1.0)?, &grid)?;
    let vf = Arc::new(solve_hji(&payoff, &dynamics, &SolverSettings::default())?);

    for detected in [true, false] {
        let obstacles = [ObstacleView { id: 1, disk, detected }];
        let mut policy = SafetyPolicy::new(vf.clone(), 0.0);
        let mut s = State::new(0.0, 0.0, 0.0);
        let mut closest = f64::INFINITY;
        let mut first_override = None;
        for tick in 0..360 {
            let out = policy.filter_control(&s, 0.0, &obstacles, &dynamics);
            if out.override_active && first_override.is_none() {
                first_override = Some((tick, out.value));
            }
            s = rk4_step(&s, out.u, DEFAULT_DT, &dynamics);
            closest = closest.min(disk.signed_distance(s.x, s.y));
        }
        match first_override {
            Some((tick, v)) => println!("detected: override from tick {tick} at V = {v:.3}, closest gap {closest:.3}"),
            None => println!("undetected: no override, closest gap {closest:.3} (negative means a crash)"),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
