//! A simulated supervisor watches a four-robot team under three safe sets.
//!
//! ```text
//! cargo run --release --example team_trials
//! ```

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safekernel::dynamics::DEFAULT_DT;
use safekernel::learning::select_value_function;
use safekernel::reachability::{build_library, parse_range, Grid3, SolverSettings};
use safekernel::simulation::{run_trials, AlphaRule, Treatment, TreatmentKind, TrialReport, WorldConfig};
use safekernel::supervisor::{collect_interventions, SceneConfig, SupervisorParams};

pub fn run() -> safekernel::Result<()> {
    let grid = Grid3::square(15.0, 61, 36)?;
    let library: Vec<_> = build_library(&parse_range("0.5:1.5:0.25")?, 1.0, &grid, &SolverSettings::default())?
        .into_iter()
        .map(Arc::new)
        .collect();
    let supervisor = SupervisorParams::new(library[1].clone(), 0.3, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records = collect_interventions(&supervisor, 200, &mut rng, DEFAULT_DT, &SceneConfig::default(), "demo")?;
    let plain: Vec<_> = library.iter().map(|v| (**v).clone()).collect();
    let fit = select_value_function(&plain, &records, None, false)?;

    // One minute per trial keeps the demo short.
    let world = WorldConfig { trial_duration: 3600, ..Default::default() };
    println!("{:13} {:>6} {:>6} {:>8} {:>6} {:>6}", "treatment", "trips", "crash", "removals", "FP", "score");
    for (kind, rule) in [
        (TreatmentKind::Standard, AlphaRule::Zero),
        (TreatmentKind::Learned, AlphaRule::Mu),
        (TreatmentKind::Conservative, AlphaRule::Zero),
    ] {
        let vf = Treatment::value_function(kind, &library, Some(&fit), &world.dynamics(), 1.0, &SolverSettings::default())?;
        let treatment = Treatment { kind, vf, alpha: rule.level(Some(&fit))? };
        let report = TrialReport::new(&treatment, rule, run_trials(&world, &treatment, &supervisor, 4, 0)?);
        let t = report.totals;
        println!(
            "{:13} {:>6} {:>6} {:>8} {:>6} {:>6}",
            format!("{kind:?}"),
            t.trips,
            t.crashes,
            t.interventions,
            t.false_positives,
            t.score
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
