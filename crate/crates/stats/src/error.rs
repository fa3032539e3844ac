use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("value {0} outside the open interval (-1, 1)")]
    OutOfRange(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("cell ({0}, {1}) of the 2x2 design is empty")]
    EmptyCell(usize, usize),
    #[error("unbalanced 2x2 design: cell sizes {0:?}")]
    Unbalanced([usize; 4]),
    #[error("factor level {0} is not 0 or 1")]
    InvalidLevel(usize),
    #[error("design matrix is rank deficient (column `{0}`)")]
    RankDeficient(String),
    #[error("mixed model is singular: {0}")]
    Singular(String),
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;
