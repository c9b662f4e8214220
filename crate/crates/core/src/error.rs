use thiserror::Error;

/// Errors raised across the solver stack and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A linear or mixed-integer program is structurally malformed.
    #[error("malformed program: {0}")]
    Malformed(String),

    /// An operation was called on a value it does not accept (e.g. a
    /// non-optimal LP solution passed to a certificate check).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("simplex iteration limit reached after {0} iterations")]
    IterationLimit(usize),

    #[error("time limit reached")]
    TimeLimit,

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A big-M bound that is not proven valid was active at the incumbent,
    /// even after the retry ladder was exhausted.
    #[error("big-M bound {bound} suspected too small after {retries} retries")]
    MBoundSuspect { bound: f64, retries: usize },

    #[error("brute-force enumeration refused: m = {m} exceeds the limit of {limit}")]
    TooManyFeatures { m: usize, limit: usize },

    #[error("every grid point failed; last error: {0}")]
    AllGridPointsFailed(String),

    #[error("solver finished without a usable solution: {0}")]
    NoSolution(String),

    #[error("missing coverage: {0}")]
    Coverage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
