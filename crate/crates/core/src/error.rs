use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A time argument or parameter is outside the kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The mixed partial derivative was requested on the diagonal `t == s`.
    #[error("mixed partial is singular on the diagonal t = s = {0}")]
    Singularity(f64),

    /// Quantity is only defined for `beta` in `(1/2, 3/4)`.
    #[error("unsupported regime: beta = {beta} (requires {requirement})")]
    UnsupportedRegime { beta: f64, requirement: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("Gram matrix is not positive semidefinite for kernel {kernel} on {grid} (jitter cap {cap:e} exceeded)")]
    NotPsd { kernel: String, grid: String, cap: f64 },

    /// `int X^2 dt` vanished, so no estimator is defined.
    #[error("degenerate path: (1/T) int X^2 dt = {0:e}")]
    DegeneratePath(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
