use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("composite dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("operator is not Hermitian: |h[{row},{col}] - conj(h[{col},{row}])| = {deviation:e}")]
    NotHermitian { row: usize, col: usize, deviation: f64 },

    #[error("operator is not unitary: max |U^dag U - 1| = {0:e}")]
    NotUnitary(f64),

    #[error("Kraus completeness violated: max |sum K^dag K - 1| = {0:e}")]
    KrausIncomplete(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported clock: {0}")]
    UnsupportedClock(String),

    #[error("unsupported schedule: {0}")]
    UnsupportedSchedule(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("event times coincide at t = {0}")]
    CoincidentEvents(f64),

    #[error("clock and system spectra are not resonant (constraint residual {0:e})")]
    ResonanceFailure(f64),

    #[error("geometric series diverges: spectral radius of K/2 is {0}")]
    SeriesDivergence(f64),

    #[error("conditioning time {t} is unreachable (denominator {denominator:e})")]
    Unreachable { t: f64, denominator: f64 },

    #[error("json: {0}")]
    Json(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
