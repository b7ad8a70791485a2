use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("LP is infeasible")]
    Infeasible,
    #[error("LP is unbounded")]
    Unbounded,
    #[error("set is not a C-set (origin not strictly interior or set unbounded)")]
    NotACSet,
    #[error("gauge map Jacobian requested at the origin")]
    ZeroInput,
    #[error("state lies outside the invariant set")]
    StateOutsideS,
    #[error("state lies within the boundary band of the invariant set")]
    StateOnBoundary,
    #[error("invalid certificate: {0}")]
    CertificateInvalid(String),
    #[error("RPI iteration did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("invariant set exceeds {0} row pairs")]
    SetTooComplex(usize),
    #[error("invariant set has empty interior")]
    EmptyInterior,
    #[error("no candidate gain produced a valid certificate")]
    NoValidGain,
    #[error("closed loop is not Schur stable (spectral radius {0:.6})")]
    Unstable(f64),
    #[error("network graph is disconnected")]
    DisconnectedNetwork,
    #[error("singular inertia for generator {0}")]
    SingularInertia(usize),
    #[error("input set U is not an axis-aligned box")]
    NonBoxInputSet,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("training aborted: {0}")]
    TrainingAborted(String),
    #[error("policy failed at step {step}: {source}")]
    PolicyStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
