//! Solve the avoid value function for one obstacle and inspect it.
//!
//! ```text
//! cargo run --release --example value_function
//! ```

use std::f64::consts::PI;

use safekernel::dynamics::{DubinsParams, State};
use safekernel::reachability::{signed_distance_payoff, solve_hji, Grid3, KeepOutDisk, SolverSettings};

pub fn run() -> safekernel::Result<()> {
    let grid = Grid3::square(15.0, 61, 36)?;
    let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(1.0)?, &grid)?;
    let vf = solve_hji(&payoff, &DubinsParams::with_omega(1.0), &SolverSettings::default())?;
    println!(
        "converged {} after {} steps, residual {:.2e}, epsilon_grid {:.3}",
        vf.converged,
        vf.iterations,
        vf.residual,
        vf.epsilon_grid()
    );

    // Five units east of the obstacle: heading at it is worse than heading away.
    for (label, theta) in [("towards", PI), ("sideways", PI / 2.0), ("away", 0.0)] {
        let v = vf.interpolate_value(&State::new(5.0, 0.0, theta));
        println!("  x = 5, heading {label:8} V = {v:+.3}");
    }

    let path = std::env::temp_dir().join("safekernel_slice.csv");
    vf.export_slice(PI, std::fs::File::create(&path)?)?;
    println!("heading-west slice written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
