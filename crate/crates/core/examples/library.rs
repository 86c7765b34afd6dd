//! Build a small library over the turn-rate bound and check that slower
//! turning never makes a state safer.
//!
//! ```text
//! cargo run --release --example library
//! ```

use safekernel::dynamics::State;
use safekernel::reachability::{build_library, parse_range, Grid3, SolverSettings};

pub fn run() -> safekernel::Result<()> {
    let omegas = parse_range("0.5:1.5:0.25")?;
    let grid = Grid3::square(15.0, 61, 36)?;
    let library = build_library(&omegas, 1.0, &grid, &SolverSettings::default())?;

    let probe = State::new(6.0, 0.0, std::f64::consts::PI);
    for vf in &library {
        let unsafe_nodes = vf.values.iter().filter(|v| **v < 0.0).count();
        println!(
            "omega_max {:.2}: V(probe) = {:+.3}, unsafe nodes {unsafe_nodes}",
            vf.omega_max,
            vf.interpolate_value(&probe)
        );
    }
    for pair in library.windows(2) {
        let worst = pair[0].values.iter().zip(&pair[1].values).map(|(a, b)| a - b).fold(f64::MIN, f64::max);
        println!("V({:.2}) - V({:.2}) never exceeds {worst:.2e}", pair[0].omega_max, pair[1].omega_max);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
