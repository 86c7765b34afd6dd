//! Recover a supervisor's turn-rate model, trigger level and noise from its
//! interventions, then predict how many of its interventions each safe set
//! would leave unnecessary.
//!
//! ```text
//! cargo run --release --example fit_supervisor
//! ```

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safekernel::dynamics::DEFAULT_DT;
use safekernel::learning::{predicted_fp_fraction, select_value_function};
use safekernel::reachability::{build_library, parse_range, Grid3, SolverSettings};
use safekernel::supervisor::{collect_interventions, SceneConfig, SupervisorParams};

pub fn run() -> safekernel::Result<()> {
    let grid = Grid3::square(15.0, 61, 36)?;
    let library = build_library(&parse_range("0.25:2.0:0.25")?, 1.0, &grid, &SolverSettings::default())?;
    let truth = library.iter().find(|v| v.omega_max == 1.0).unwrap();
    let hidden = Arc::new(library.iter().find(|v| v.omega_max == 0.75).unwrap().clone());

    let supervisor = SupervisorParams::new(hidden, 0.3, 0.05)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records = collect_interventions(&supervisor, 200, &mut rng, DEFAULT_DT, &SceneConfig::default(), "demo")?;

    let fit = select_value_function(&library, &records, Some(truth), true)?;
    for c in &fit.candidates {
        println!(
            "  omega {:.2}  log L {:9.2}  mu {:.3}  {}",
            c.omega_max,
            c.log_likelihood,
            c.mu_hat,
            if c.conservative { "" } else { "(less cautious than the true model)" }
        );
    }
    println!("selected omega_max {} mu {:.3} sigma {:.3}", fit.omega_max(), fit.mu_hat(), fit.sigma_hat());

    let learned = &library[fit.library_index()];
    for (label, vf, level) in [
        ("standard at 0", truth, 0.0),
        ("learned at mu", learned, fit.mu_hat()),
        ("learned at mu + 2 sigma", learned, fit.mu_hat() + 2.0 * fit.sigma_hat()),
    ] {
        println!("{label:24} predicted unnecessary interventions {:.3}", predicted_fp_fraction(vf, level, &records)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
