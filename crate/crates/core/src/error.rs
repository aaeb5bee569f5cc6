use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsbError {
    #[error("NotSymmetric: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("NegativeEigenvalue: eigenvalue {value:e} of Q/2 is below -{tolerance:e}")]
    NegativeEigenvalue { value: f64, tolerance: f64 },
    #[error("NonPositiveTau: elapsed time {0} must be positive")]
    NonPositiveTau(f64),
    #[error("NonPositiveEigenvalue: eigenvalue {0} must be positive")]
    NonPositiveEigenvalue(f64),
    #[error("NonMonotoneTime: final time {t} must exceed initial time {t0}")]
    NonMonotoneTime { t0: f64, t: f64 },
    #[error("DegreeTooLarge: Hermite degree {degree} exceeds {max}")]
    DegreeTooLarge { degree: usize, max: usize },
    #[error("SingularGramian: controllability Gramian minimum eigenvalue {min_eigenvalue:e}")]
    SingularGramian { min_eigenvalue: f64 },
    #[error("SingularQ: eigenvalue {0:e} of Q/2 is not positive")]
    SingularQ(f64),
    #[error("InvalidBounds: [{lower}, {upper}] is not a finite increasing interval")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("TooFewPoints: {count} points per dimension, need at least {min}")]
    TooFewPoints { count: usize, min: usize },
    #[error("TooManyNodes: {count} grid nodes exceed the dense limit {max}")]
    TooManyNodes { count: usize, max: usize },
    #[error("UnsupportedDimension: {0}")]
    UnsupportedDimension(usize),
    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("NonPositiveEntry: entry {index} is {value}")]
    NonPositiveEntry { index: usize, value: f64 },
    #[error("NonPositiveDensity: {0}")]
    NonPositiveDensity(String),
    #[error("InvalidDensity: {0}")]
    InvalidDensity(String),
    #[error("NotConverged: Hilbert distance {distance:e} after {epochs} epochs")]
    NotConverged { epochs: usize, distance: f64 },
    #[error("TimeOutOfHorizon: {t} outside [{t0}, {t1}]")]
    TimeOutOfHorizon { t: f64, t0: f64, t1: f64 },
    #[error("QueryOutOfBounds: coordinate {value} in dimension {dim} outside [{lower}, {upper}]")]
    QueryOutOfBounds { dim: usize, value: f64, lower: f64, upper: f64 },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, QsbError>;

/// Elapsed time `t - t0`, or `NonMonotoneTime` unless `t > t0`.
pub fn check_times(t0: f64, t: f64) -> Result<f64> {
    if !(t > t0) || !t.is_finite() || !t0.is_finite() {
        return Err(QsbError::NonMonotoneTime { t0, t });
    }
    Ok(t - t0)
}
