use thiserror::Error;

/// Errors raised by the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid pulse spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical invariant violated at t = {t:.4e} s: {what} (try reducing dt)")]
    Invariant { t: f64, what: String },

    #[error("timestep too coarse: dt = {dt:.3e} s exceeds {limit:.3e} s")]
    TimestepTooCoarse { dt: f64, limit: f64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("estimator did not converge after {iterations} iterations (last |dL| = {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("rejection sampling: {0}")]
    Rejection(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParam(_) | Error::InvalidSpec(_) => 2,
            Error::Invariant { .. } | Error::TimestepTooCoarse { .. } => 3,
            Error::NonConvergence { .. } | Error::NoRoot(_) | Error::Bracket(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
