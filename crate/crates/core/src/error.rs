use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid collision model: {0}")]
    InvalidModel(String),
    #[error("invalid initial condition: {0}")]
    InvalidInitialCondition(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("s = {s} lies outside the domain of the spectral function")]
    OutOfDomain { s: f64 },
    #[error("{0} has no closed form")]
    NoClosedForm(&'static str),
    #[error("no zero in bracket [{lo}, {hi}]")]
    NoZeroInBracket { lo: f64, hi: f64 },
    #[error("finite-difference derivative at s = {s} is ill-conditioned")]
    IllConditioned { s: f64 },
    #[error("Phi(1) = {phi1} is within {tolerance} of zero for an estimated profile; cannot separate regimes A/B/C")]
    AmbiguousRegime { phi1: f64, tolerance: f64 },
    #[error("case {requested} requires regime {required}, model is in regime {actual}")]
    MismatchedCase { requested: String, required: String, actual: String },
    #[error("solver unstable at t = {t}: max modulus {modulus} before projection")]
    Unstable { t: f64, modulus: f64 },
    #[error("structural invariant violated: {0}")]
    InvariantViolated(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
