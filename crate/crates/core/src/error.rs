use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Population in the highest retained number state exceeded the cap.
    #[error(
        "truncation cap exceeded: population {population:.3e} in |{level}> exceeds cap {cap:.1e}; \
         raise n_cut"
    )]
    Truncation {
        level: usize,
        population: f64,
        cap: f64,
    },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient tail points: {found} points beyond t = {t_min}, need at least {needed}")]
    InsufficientTailPoints {
        found: usize,
        needed: usize,
        t_min: f64,
    },

    #[error("reconstruction produced negative probability {value:.3e} at step {step}; spontaneous-emission model mismatch")]
    NegativeReconstruction { step: usize, value: f64 },

    #[error("optimizer did not converge on any of {restarts} restarts (best objective {best_objective:.3e})")]
    NonConvergence {
        restarts: usize,
        best_objective: f64,
        best: Box<crate::step_gate::PulseSequence>,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{context}, line {line}: {message}")]
    Parse {
        context: &'static str,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
