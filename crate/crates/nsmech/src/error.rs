//! Error taxonomy for the whole engine.
//!
//! Variants are grouped by who is at fault: bad caller input, a bad model
//! definition, a bad configuration file, a simulation that cannot make
//! progress, a restitution request the energy analysis refuses, or an
//! internal cross-check that failed (which always indicates a bug or a
//! numerically hostile problem, never normal operation).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed direct input: wrong shapes, non-finite entries, parameters
    /// outside their documented range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model definition violated its contract (mass matrix not SPD,
    /// callback output of the wrong shape, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A configuration file failed validation. `field` names the offending
    /// key with dotted path.
    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },

    /// The event loop could not make progress (step size collapsed, an event
    /// re-fired without advancing time, drift correction diverged). Carries a
    /// diagnostic state dump.
    #[error("simulation stalled at t = {t}: {message}\n{dump}")]
    Stalled { t: f64, message: String, dump: String },

    /// A restitution matrix failed the energetic-consistency test and strict
    /// mode was in effect.
    #[error(
        "restitution request refused: energetic consistency violated \
         (max eigenvalue {eigenvalue:.3e} > tolerance {tolerance:.3e}); \
         rerun with the override flag to force resolution"
    )]
    InfeasibleRestitution { eigenvalue: f64, tolerance: f64 },

    /// Two independent computations of the same quantity disagreed beyond
    /// tolerance.
    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::InternalConsistency(msg.into())
    }

    /// Process exit code for CLI reporting: 2 validation, 3 stalled runtime,
    /// 4 refused restitution, 5 internal consistency (io counts as
    /// validation: the file the user named could not be used).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::InvalidModel(_)
            | Error::Config { .. }
            | Error::Io(_) => 2,
            Error::Stalled { .. } => 3,
            Error::InfeasibleRestitution { .. } => 4,
            Error::InternalConsistency(_) => 5,
        }
    }
}
