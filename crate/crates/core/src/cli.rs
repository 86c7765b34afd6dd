//! Command line front end. `safekernel --help` lists the subcommands.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::DubinsParams;
use crate::error::{Error, Result};
use crate::learning::{predicted_fp_fraction, select_value_function, SupervisorFit};
use crate::reachability::{
    build_library, load_library, parse_range, save_library, signed_distance_payoff, solve_hji, Grid3, KeepOutDisk,
    SolverSettings, ValueFunction,
};
use crate::session::{Server, ServerConfig, SessionConfig, TeamSetup};
use crate::simulation::{run_trials, AlphaRule, Treatment, TreatmentKind, TrialReport, WorldConfig};
use crate::supervisor::{collect_interventions, read_records, write_records, SceneConfig, SupervisorParams};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SAFEKERNEL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "safekernel", version, about = "Learn a supervisor's safe set and run robot teams with it")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one value function.
    Solve(SolveArgs),
    /// Solve a value function per turn-rate bound.
    Library(LibraryArgs),
    /// Generate synthetic intervention records.
    Synth(SynthArgs),
    /// Select the most likely library member for a set of records.
    Fit(FitArgs),
    /// Fraction of records lying above a level of a value function.
    Predict(PredictArgs),
    /// Run simulated team trials.
    Simulate(SimulateArgs),
    /// Host live sessions over a websocket.
    Serve(ServeArgs),
    /// Write one heading slice of a value function as CSV.
    ExportSlice(ExportSliceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Node counts along x, y and heading.
    #[arg(long, default_value = "121,121,60", value_parser = parse_dims)]
    pub grid: [usize; 3],
    /// Half width of the square position domain.
    #[arg(long, default_value_t = 15.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_max: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<Grid3> {
        let g = Grid3::new([-self.half_width; 2], [self.half_width; 2], self.grid)?;
        g.validate()?;
        Ok(g)
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings { t_max: self.t_max, ..Default::default() }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub omega: f64,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LibraryArgs {
    /// `start:stop:step`, inclusive.
    #[arg(long, default_value = "0.25:3.0:0.25")]
    pub omegas: String,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Supervisor's turn-rate bound.
    #[arg(long)]
    pub omega: f64,
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Take the supervisor's value function from this library instead of solving it.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Heading jitter half-width in degrees.
    #[arg(long, default_value_t = 15.0)]
    pub jitter: f64,
    #[arg(long, default_value = "synth")]
    pub session_id: String,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// True value function; candidates must be at least as cautious as it.
    #[arg(long = "true")]
    pub true_vf: Option<PathBuf>,
    /// Keep candidates that are less cautious than the true value function.
    #[arg(long)]
    pub no_prior: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub level: f64,
    #[arg(long)]
    pub records: PathBuf,
}

#[derive(Debug, Args)]
pub struct SupervisorArgs {
    /// Turn-rate bound of the simulated supervisor's value function.
    #[arg(long, default_value_t = 0.75)]
    pub supervisor_omega: f64,
    #[arg(long, default_value_t = 0.3)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub treatment: TreatmentKind,
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "zero")]
    pub alpha: AlphaRule,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trial length in ticks.
    #[arg(long)]
    pub duration: Option<u64>,
    #[arg(long)]
    pub detection: Option<f64>,
    #[command(flatten)]
    pub supervisor: SupervisorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long)]
    pub library: PathBuf,
    /// Adds the learned treatment to Phase III.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mu")]
    pub alpha: AlphaRule,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    pub tick_hz: f64,
}

#[derive(Debug, Args)]
pub struct ExportSliceArgs {
    #[arg(long)]
    pub vf: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected NX,NY,NT, got {s:?}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_records(path: &Path) -> Result<Vec<crate::supervisor::InterventionRecord>> {
    read_records(BufReader::new(File::open(path)?))
}

fn load_fit(path: &Path) -> Result<SupervisorFit> {
    SupervisorFit::read_json(BufReader::new(File::open(path)?))
}

fn library_member(library: &[Arc<ValueFunction>], omega: f64) -> Result<Arc<ValueFunction>> {
    library
        .iter()
        .find(|v| (v.omega_max - omega).abs() < 1e-9)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("library has no member with omega_max = {omega}")))
}

fn solve_one(omega: f64, radius: f64, grid: &GridArgs) -> Result<ValueFunction> {
    let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(radius)?, &grid.grid()?)?;
    let settings = grid.settings();
    let vf = solve_hji(&payoff, &DubinsParams::with_omega(omega), &settings)?;
    if !vf.converged {
        return Err(Error::NonConvergence { omega_max: omega, residual: vf.residual, t: settings.t_max });
    }
    Ok(vf)
}

/// Builds the Phase III treatment of `kind` against a loaded library.
pub fn build_treatment(
    kind: TreatmentKind,
    library: &[Arc<ValueFunction>],
    fit: Option<&SupervisorFit>,
    alpha: AlphaRule,
    world: &WorldConfig,
) -> Result<Treatment> {
    let vf = Treatment::value_function(
        kind,
        library,
        fit,
        &world.dynamics(),
        world.obstacle_radius,
        &SolverSettings::default(),
    )?;
    Ok(Treatment { kind, vf, alpha: alpha.level(fit)? })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one parsed command, writing progress lines to `out`.
pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    configure_threads()?;
    match command {
        Command::Solve(a) => {
            let vf = solve_one(a.omega, a.radius, &a.grid)?;
            vf.write_json(create(&a.out)?)?;
            writeln!(out, "solved omega_max={} residual={:.3e} -> {}", a.omega, vf.residual, a.out.display())?;
        }
        Command::Library(a) => {
            let omegas = parse_range(&a.omegas)?;
            let lib = build_library(&omegas, a.radius, &a.grid.grid()?, &a.grid.settings())?;
            let paths = save_library(&a.out, &lib)?;
            writeln!(out, "wrote {} value functions to {}", paths.len(), a.out.display())?;
        }
        Command::Synth(a) => {
            let vf = match &a.library {
                Some(dir) => {
                    let lib: Vec<Arc<ValueFunction>> = load_library(dir)?.into_iter().map(Arc::new).collect();
                    library_member(&lib, a.omega)?
                }
                None => Arc::new(solve_one(a.omega, a.radius, &a.grid)?),
            };
            let params = SupervisorParams::new(vf.clone(), a.mu, a.sigma)?;
            let scene = SceneConfig {
                obstacle_radius: vf.obstacle_radius,
                heading_jitter: a.jitter.to_radians(),
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let dt = WorldConfig::default().dt;
            let records = collect_interventions(&params, a.scenes, &mut rng, dt, &scene, &a.session_id)?;
            let mut w = create(&a.out)?;
            write_records(&mut w, &records)?;
            w.flush()?;
            writeln!(out, "wrote {} records to {}", records.len(), a.out.display())?;
        }
        Command::Fit(a) => {
            let library = load_library(&a.library)?;
            let records = load_records(&a.records)?;
            let true_vf = a.true_vf.as_deref().map(ValueFunction::load).transpose()?;
            let fit = select_value_function(&library, &records, true_vf.as_ref(), !a.no_prior)?;
            fit.write_json(create(&a.out)?)?;
            writeln!(
                out,
                "selected omega_max={} mu_hat={:.4} sigma_hat={:.4} log_likelihood={:.3} excluded={}",
                fit.omega_max(),
                fit.mu_hat(),
                fit.sigma_hat(),
                fit.selected.log_likelihood,
                fit.n_excluded
            )?;
        }
        Command::Predict(a) => {
            let vf = ValueFunction::load(&a.vf)?;
            let records = load_records(&a.records)?;
            let fraction = predicted_fp_fraction(&vf, a.level, &records)?;
            writeln!(out, "{fraction}")?;
        }
        Command::Simulate(a) => {
            let library: Vec<Arc<ValueFunction>> = load_library(&a.library)?.into_iter().map(Arc::new).collect();
            let fit = a.fit.as_deref().map(load_fit).transpose()?;
            let mut world = WorldConfig { obstacle_radius: library[0].obstacle_radius, ..Default::default() };
            if let Some(d) = a.duration {
                world.trial_duration = d;
            }
            if let Some(p) = a.detection {
                world.detection_prob = p;
            }
            world.validate()?;
            let treatment = build_treatment(a.treatment, &library, fit.as_ref(), a.alpha, &world)?;
            let sup_vf = library_member(&library, a.supervisor.supervisor_omega)?;
            let supervisor = SupervisorParams::new(sup_vf, a.supervisor.mu, a.supervisor.sigma)?;
            let trials = run_trials(&world, &treatment, &supervisor, a.trials, a.seed)?;
            let report = TrialReport::new(&treatment, a.alpha, trials);
            let mut w = create(&a.out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            w.write_all(b"\n")?;
            w.flush()?;
            let t = &report.totals;
            writeln!(
                out,
                "trips={} crashes={} interventions={} false_positives={} score={}",
                t.trips, t.crashes, t.interventions, t.false_positives, t.score
            )?;
        }
        Command::Serve(a) => {
            let library: Vec<Arc<ValueFunction>> = load_library(&a.library)?.into_iter().map(Arc::new).collect();
            let fit = a.fit.as_deref().map(load_fit).transpose()?;
            let world = WorldConfig { obstacle_radius: library[0].obstacle_radius, ..Default::default() };
            let mut team = vec![TeamSetup {
                treatment: build_treatment(TreatmentKind::Standard, &library, None, AlphaRule::Zero, &world)?,
                alpha_rule: AlphaRule::Zero,
            }];
            if let Some(fit) = &fit {
                team.push(TeamSetup {
                    treatment: build_treatment(TreatmentKind::Learned, &library, Some(fit), a.alpha, &world)?,
                    alpha_rule: a.alpha,
                });
            }
            team.push(TeamSetup {
                treatment: build_treatment(TreatmentKind::Conservative, &library, None, AlphaRule::Zero, &world)?,
                alpha_rule: AlphaRule::Zero,
            });
            let mut session = SessionConfig::new(team);
            session.world = world;
            let mut config = ServerConfig::new(a.port, session);
            config.tick_hz = a.tick_hz;
            config.log_dir = a.log_dir;
            let server = Server::bind(config)?;
            writeln!(out, "listening on ws://{}", server.local_addr()?)?;
            out.flush()?;
            server.run()?;
        }
        Command::ExportSlice(a) => {
            let vf = ValueFunction::load(&a.vf)?;
            let mut w = create(&a.out)?;
            vf.export_slice(a.theta, &mut w)?;
            w.flush()?;
            writeln!(out, "wrote slice theta={} -> {}", a.theta, a.out.display())?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 ok, 2 usage, 3 data, 4 non-convergence.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, &mut io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
