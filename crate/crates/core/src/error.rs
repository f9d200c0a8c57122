use thiserror::Error;

/// Errors produced anywhere in the simulation and identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("value error: {0}")]
    Value(String),

    #[error("mass matrix is numerically singular (condition number {condition:.3e})")]
    SingularMass { condition: f64 },

    #[error("numerical blow-up at t = {t}: {detail}")]
    NumericalBlowup { t: f64, detail: String },

    #[error(
        "burn-in failed: terminal constraint error {error:.3e} m >= tolerance {tolerance:.3e} m \
         after {steps} steps; try more burn-in steps or larger alpha/beta"
    )]
    BurnInFailed {
        error: f64,
        tolerance: f64,
        steps: usize,
    },

    #[error("rank-deficient least-squares problem: {0}")]
    Rank(String),

    #[error("no dominant spectral peak: {0}")]
    Spectrum(String),

    #[error("rotation axis undefined: {0}")]
    DegenerateAxis(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "SchemaError",
            Error::Reference(_) => "ReferenceError",
            Error::Topology(_) => "TopologyError",
            Error::Value(_) => "ValueError",
            Error::SingularMass { .. } => "SingularMassError",
            Error::NumericalBlowup { .. } => "NumericalBlowupError",
            Error::BurnInFailed { .. } => "BurnInFailedError",
            Error::Rank(_) => "RankError",
            Error::Spectrum(_) => "SpectrumError",
            Error::DegenerateAxis(_) => "DegenerateAxisError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
