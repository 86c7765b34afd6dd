//! Let a noisy idealized supervisor watch approach scenes and record where
//! it steps in.
//!
//! ```text
//! cargo run --release --example synthetic_interventions
//! ```

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safekernel::dynamics::{DubinsParams, DEFAULT_DT};
use safekernel::reachability::{signed_distance_payoff, solve_hji, Grid3, KeepOutDisk, SolverSettings};
use safekernel::supervisor::{collect_interventions, write_records, SceneConfig, SupervisorParams};

pub fn run() -> safekernel::Result<()> {
    let grid = Grid3::square(15.0, 61, 36)?;
    let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(1.0)?, &grid)?;
    let vs = Arc::new(solve_hji(&payoff, &DubinsParams::with_omega(0.75), &SolverSettings::default())?);
    let supervisor = SupervisorParams::new(vs.clone(), 0.3, 0.1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let records = collect_interventions(&supervisor, 300, &mut rng, DEFAULT_DT, &SceneConfig::default(), "demo")?;
    let values: Vec<f64> = records.iter().map(|r| vs.interpolate_value(&r.relative_state)).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    println!("{} interventions, V_S at intervention: mean {mean:.3}, sd {sd:.3}", records.len());

    let first = &records[0];
    println!(
        "first record: tick {}, robot ({:.2}, {:.2}) heading {:.2}",
        first.tick, first.absolute_state.x, first.absolute_state.y, first.absolute_state.theta
    );
    let path = std::env::temp_dir().join("safekernel_interventions.jsonl");
    write_records(std::fs::File::create(&path)?, &records)?;
    println!("records written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
