use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("control {u} exceeds bound {omega_max}")]
    ControlBound { u: f64, omega_max: f64 },

    #[error("policy produced a non-finite control at t = {t}")]
    PolicyFault { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CFL factor {0} must lie in (0, 1]")]
    CflViolation(f64),

    #[error("solver did not converge for omega_max = {omega_max} (residual {residual:.3e} after t = {t:.2})")]
    NonConvergence { omega_max: f64, residual: f64, t: f64 },

    #[error("value functions are defined on different grids")]
    GridMismatch,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{excluded} of {total} records fall outside the value-function domain")]
    TooManyExcluded { excluded: usize, total: usize },

    #[error("no library candidate satisfies the conservativeness prior")]
    EmptyFeasibleSet,

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("arena too crowded: could not place {what} after {attempts} samples")]
    ArenaTooCrowded { what: &'static str, attempts: usize },

    #[error("unknown obstacle id {0}")]
    UnknownObstacle(u64),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::CflViolation(_) => 2,
            Error::NonConvergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
