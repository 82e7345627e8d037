//! Error types shared across the library.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Library error type.
///
/// Variants are grouped by how a front end should treat them:
/// [`Error::exit_code`] maps input/validation problems to 1 and numerical
/// failures (singular geometry, degenerate estimates, unbounded bounds) to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a documented precondition (e.g. photodiode not on the
    /// ground plane where the simplified channel model requires it).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The calibration geometry does not determine the parameters
    /// (rank-deficient or numerically singular Gram matrix).
    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// An estimate collapsed to a value from which nothing can be recovered.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    /// The position cannot be determined from the given readings.
    #[error("unlocatable: {0}")]
    Unlocatable(String),

    /// The Fisher information matrix is singular: the position is
    /// unobservable and the error bound is unbounded.
    #[error("unbounded CRLB: {0}")]
    UnboundedCrlb(String),

    /// Gaussian-process fit failed (kernel not positive definite even after
    /// jitter escalation).
    #[error("gp fit failed: {0}")]
    GpFit(String),

    /// A data or scenario file could not be parsed.
    #[error("parse error in {path} (row {row}): {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    /// Structural validation of parsed input failed.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code convention: 1 for validation/parse problems,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Contract(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Io(_) => 1,
            Error::SingularGeometry(_)
            | Error::DegenerateEstimate(_)
            | Error::Unlocatable(_)
            | Error::UnboundedCrlb(_)
            | Error::GpFit(_) => 2,
        }
    }
}
