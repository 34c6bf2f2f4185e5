use thiserror::Error;

/// Everything that can go wrong inside the library.
///
/// Variants split into two families: bad input (`Invalid*`, `OutOfBand`, ...)
/// and numerical failure (`NoConvergence`, `StepFailure`, ...). The CLI maps
/// the first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("2Ω = {two_omega} lies outside the doublon band [{lo}, {hi}]")]
    OutOfBand { two_omega: f64, lo: f64, hi: f64 },

    #[error("atom frequency {omega} is not below the single-photon band (edge {edge})")]
    SingularDetuning { omega: f64, edge: f64 },

    #[error("no doublon bound band exists for U = 0")]
    NotLocalized,

    #[error("group velocity vanishes at K0 = {k0}; decay rates diverge")]
    DivergentRate { k0: f64 },

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("requested quantity unavailable for this backend: {0}")]
    Unavailable(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("integrator step failure: {0}")]
    StepFailure(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence(_)
                | Error::StepFailure(_)
                | Error::Singular(_)
                | Error::NotFound(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
