use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants are grouped by the exit code the CLI maps them to, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("degree error: {0}")]
    Degree(String),

    #[error("missing moment for monomial {0}")]
    MissingMoment(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("relaxation infeasible: primal gap stalled at {gap:.3e} after {iterations} iterations")]
    Infeasible { gap: f64, iterations: usize },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("projector has no null space; predictor is not identifiable")]
    NonIdentifiable,

    #[error("null space does not involve the response coordinate")]
    DegenerateResponse,

    #[error("cover failure: reached coverage {coverage} of required {required} (loss {loss:.4e})")]
    CoverFailure {
        coverage: usize,
        required: f64,
        loss: f64,
    },

    #[error("no candidate model admits a cover: {}", .0.join("; "))]
    AllCoversFailed(Vec<String>),

    #[error("size error: {0}")]
    Size(String),

    #[error("oracle infeasible: no term subset reaches the required coverage")]
    OracleInfeasible,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::Degree(_)
            | Error::MissingMoment(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Consistency(_) => 2,
            Error::Solver(_)
            | Error::Infeasible { .. }
            | Error::NonIdentifiable
            | Error::DegenerateResponse => 3,
            Error::CoverFailure { .. } | Error::AllCoversFailed(_) | Error::OracleInfeasible => 4,
            Error::Size(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
