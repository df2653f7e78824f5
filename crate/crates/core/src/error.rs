use thiserror::Error;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Validation,
    Calibration,
    Simulation,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("{context}: invalid migration matrix: {reason}")]
    InvalidMatrix { context: String, reason: String },

    #[error("not a correlation matrix: {reason} (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotCorrelation { reason: String, min_eigenvalue: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("loading saturation: a.Ca = {systematic_variance} is not below 1 - 1e-10")]
    LoadingSaturation { systematic_variance: f64 },

    #[error("degenerate loading: {0}")]
    DegenerateLoading(String),

    #[error("undefined loading ratio: {0}")]
    UndefinedRatio(String),

    #[error("calibration inconsistency: {0}")]
    CalibrationInconsistency(String),

    #[error("recovery calibration has no solution: {reason} (residual {residual:.3e})")]
    NoSolution { reason: String, residual: f64 },

    #[error("conditional expectation undefined: {0}")]
    UndefinedConditional(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("empty conditioning event: {0}")]
    EmptyConditioning(String),

    #[error("closed form not applicable: {0}")]
    NotApplicable(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse(_) => ErrorClass::Parse,
            Error::InvalidMatrix { .. }
            | Error::NotCorrelation { .. }
            | Error::Invalid(_)
            | Error::Dimension(_)
            | Error::Domain(_) => ErrorClass::Validation,
            Error::LoadingSaturation { .. }
            | Error::DegenerateLoading(_)
            | Error::UndefinedRatio(_)
            | Error::CalibrationInconsistency(_)
            | Error::NoSolution { .. }
            | Error::UndefinedConditional(_) => ErrorClass::Calibration,
            Error::DegenerateSample(_)
            | Error::EmptyConditioning(_)
            | Error::NotApplicable(_)
            | Error::Simulation(_) => ErrorClass::Simulation,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
