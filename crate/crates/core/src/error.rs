use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("window holds {len} of {w} samples; a full window is required")]
    WindowNotFull { len: usize, w: usize },

    #[error("window w = {w} is infeasible: it must exceed w_min = {w_min:.6}")]
    InfeasibleWindow { w: f64, w_min: f64 },

    #[error("degenerate change: post-change subspace coincides with the pre-change one")]
    DegenerateChange,

    #[error("delta = {delta} outside the open interval (0, {upper})")]
    DeltaOutOfDomain { delta: f64, upper: f64 },

    #[error("drift d = {d} must exceed sigma2 = {sigma2} for a positive MGF root")]
    NoPositiveRoot { d: f64, sigma2: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("calibration failed: {0}")]
    Calibration(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
