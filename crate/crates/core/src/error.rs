use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("infeasible placement: {0}")]
    Infeasible(String),

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("mass conservation breach at t = {t}: |mass - U| = {defect:e}")]
    MassBreach { t: f64, defect: f64 },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },

    #[error("monotonicity violated at iterate {iterate}, t = {t}: {detail}")]
    Monotonicity {
        iterate: usize,
        t: f64,
        detail: String,
    },

    #[error("probe ({x}, {y}) outside the unit polydisc or on y = 0")]
    ProbeDomain { x: f64, y: f64 },

    #[error("grid too coarse: defect {defect:e} above {threshold:e}")]
    GridTooCoarse { defect: f64, threshold: f64 },

    #[error("tail mass {mass:e} exceeds {limit:e} at truncation level {n_max}")]
    TailBreach { mass: f64, limit: f64, n_max: usize },

    #[error("empty fit window: {0}")]
    EmptyWindow(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParam { .. }
                | Error::GridMismatch(_)
                | Error::Infeasible(_)
                | Error::ProbeDomain { .. }
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
