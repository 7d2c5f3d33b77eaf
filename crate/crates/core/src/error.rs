use thiserror::Error;

/// Every failure mode of the library. Statistical "Fail" outcomes of the
/// samplers are not errors; they are returned as `SampleResult::Fail`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotPd(f64),

    #[error("non-finite entry in input")]
    NonFinite,

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("cannot draw a subset of size {m} from {n} elements")]
    SubsetTooLarge { n: usize, m: usize },

    #[error("row count {0} is odd; pairing needs an even number of rows")]
    OddRowCount(usize),

    #[error("reference set is empty")]
    EmptyReferenceSet,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("parameter planner did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("dataset shape {got_rows}x{got_cols} does not match plan {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },

    #[error("point outside the density support")]
    OutOfSupport,

    #[error("quadrature did not reach tolerance: {0}")]
    QuadratureFailure(String),

    #[error("distributions have different support sizes ({0} vs {1})")]
    SupportMismatch(usize, usize),

    #[error("histogram estimator supports d <= 3, got {0}")]
    DimensionTooHigh(usize),

    #[error("covariance estimate is rank deficient")]
    DegenerateCovariance,
}

pub type Result<T> = std::result::Result<T, Error>;
