use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hilbert space: {0}")]
    InvalidSpace(String),

    #[error("mode index {index} out of range for a {modes}-mode space")]
    InvalidMode { index: usize, modes: usize },

    #[error("level index {level} out of range for mode of dimension {dim}")]
    LevelOutOfRange { level: usize, dim: usize },

    #[error("shape mismatch: expected {expected}x{expected}, got {rows}x{cols}")]
    ShapeMismatch {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("operators live on different Hilbert spaces")]
    SpaceMismatch,

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("negative rate {0}")]
    NegativeRate(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("missing parameter `{0}`")]
    MissingParameter(&'static str),

    #[error("drive {kind} targets qubit levels {upper} which exceed qubit dimension {dim}")]
    DriveOutOfTruncation {
        kind: String,
        upper: usize,
        dim: usize,
    },

    #[error("time-dependent drives require the co-rotating steady-state option")]
    TimeDependentDrives,

    #[error("no co-rotating frame makes all drives static")]
    NoCoRotatingFrame,

    #[error("steady state is degenerate: null space has dimension {0}")]
    DegenerateSteadyState(usize),

    #[error("steady-state residual {residual:.3e} exceeds {bound:.3e}")]
    SteadyStateResidual { residual: f64, bound: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("fit did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("empty sweep grid")]
    EmptyGrid,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
