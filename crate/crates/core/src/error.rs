use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("need at least {min} types, got {got}")]
    TooFewTypes { got: usize, min: usize },
    #[error("non-finite entry at ({i},{j})")]
    NonFinite { i: usize, j: usize },
    #[error("negative off-diagonal rate at ({i},{j}): {value}")]
    NegativeOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("row {i} does not sum to zero (residual {residual})")]
    RowSumNonzero { i: usize, residual: f64 },
    #[error("entry ({i},{j}) = {value} is not a probability")]
    NotAProbability { i: usize, j: usize, value: f64 },
    #[error("row {i} of stochastic matrix sums to {sum}")]
    RowSumNotOne { i: usize, sum: f64 },
    #[error("population N = {n} too small, need N >= {n_min} for a stochastic transition matrix")]
    PopulationTooSmall { n: usize, n_min: usize },
    #[error("invalid type counts: {0}")]
    InvalidCounts(String),
    #[error("invalid simplex point: {0}")]
    InvalidSimplexPoint(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("path cannot be evaluated up to {needed} (available {available})")]
    DomainTooShort { needed: f64, available: f64 },
    #[error("time {t} outside horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("step {k} at N = {n} exceeds horizon {horizon}")]
    HorizonExceeded { k: usize, n: usize, horizon: f64 },
    #[error("polynomial degree {degree} exceeds supported maximum {max}")]
    DegreeTooHigh { degree: u32, max: u32 },
    #[error("degree {degree} below minimum {min}")]
    DegreeTooLow { degree: usize, min: usize },
    #[error("enumeration refused: {reason}")]
    EnumerationTooLarge { reason: String },
    #[error("initial moments of order {order} violate normalization (residual {residual})")]
    InconsistentInitialMoments { order: usize, residual: f64 },
    #[error("Volterra step matrix singular at s = {s}")]
    SingularStep { s: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
