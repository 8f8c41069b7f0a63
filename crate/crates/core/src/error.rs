use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Phase advance per grid cell exceeds pi; the quadrature would alias.
    #[error("grid too coarse: phase advances {phase_per_step:.3} rad per step on axis {axis} (limit pi)")]
    Aliasing { axis: usize, phase_per_step: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("decoherence value {name} has modulus {modulus} > 1")]
    DecoherenceOutOfRange { name: &'static str, modulus: f64 },

    #[error("invalid arm index {0} (expected 1 or 2)")]
    InvalidArm(u8),

    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),

    #[error("path difference {x} outside [0, {max}]")]
    OutOfSchedule { x: f64, max: f64 },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge after {iterations} iterations (last relative step {last_step:e}, rss {rss:e})")]
    NoConvergence { iterations: usize, last_step: f64, rss: f64 },

    #[error("degenerate fit: decay coefficient pinned at zero, correlation coefficient undefined")]
    DegenerateFit,

    #[error("unknown measurement basis {0:?}")]
    UnknownBasis(String),

    #[error("no coincidence counts recorded")]
    ZeroCounts,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
