use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("no forbidden region: energy {energy} is not below the barrier top {top}")]
    NoForbiddenRegion { energy: f64, top: f64 },

    #[error("opacity evaluation failed at t = {time}: {source}")]
    OpacityAt {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("perturbative estimate invalid: w = {w} (requires 0 < w < 1)")]
    PerturbativeInvalid { w: f64 },

    #[error("support violation: {0}")]
    Support(String),

    #[error("value {value} outside the definition interval [{lo}, {hi}] of {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("norm drift {drift:.3e} at t = {time} exceeds tolerance (step size or grid inadequate)")]
    NormDrift { drift: f64, time: f64 },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical integration itself (as opposed to bad input).
    pub fn is_numerical_abort(&self) -> bool {
        matches!(self, Error::NormDrift { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
