#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safekernel::dynamics::DEFAULT_DT;
use safekernel::reachability::{build_library, parse_range, Grid3, SolverSettings, ValueFunction};
use safekernel::supervisor::{collect_interventions, InterventionRecord, SceneConfig, SupervisorParams};

pub const TRUE_OMEGA: f64 = 1.0;
pub const SUPERVISOR_OMEGA: f64 = 0.75;

/// The full library, omega_max 0.25 to 3.0 in steps of 0.25, r = 1, solved once per test binary.
pub fn library() -> &'static [Arc<ValueFunction>] {
    static LIB: OnceLock<Vec<Arc<ValueFunction>>> = OnceLock::new();
    LIB.get_or_init(|| {
        let omegas = parse_range("0.25:3.0:0.25").unwrap();
        build_library(&omegas, 1.0, &Grid3::default_dubins(), &SolverSettings::default())
            .unwrap()
            .into_iter()
            .map(Arc::new)
            .collect()
    })
}

pub fn plain_library() -> Vec<ValueFunction> {
    library().iter().map(|v| (**v).clone()).collect()
}

pub fn member(omega: f64) -> Arc<ValueFunction> {
    library().iter().find(|v| (v.omega_max - omega).abs() < 1e-9).cloned().expect("omega in library")
}

pub fn supervisor(mu: f64, sigma: f64) -> SupervisorParams {
    SupervisorParams::new(member(SUPERVISOR_OMEGA), mu, sigma).unwrap()
}

pub fn synth(params: &SupervisorParams, n: usize, seed: u64, jitter_deg: f64) -> Vec<InterventionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = SceneConfig { heading_jitter: jitter_deg.to_radians(), ..Default::default() };
    collect_interventions(params, n, &mut rng, DEFAULT_DT, &scene, "synthetic").unwrap()
}
