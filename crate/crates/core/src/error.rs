use thiserror::Error;

pub type Result<T> = std::result::Result<T, CemError>;

#[derive(Debug, Error)]
pub enum CemError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("non-positive coefficient in cell {cell}: {what} = {value}")]
    NonPositiveCoefficient {
        cell: usize,
        what: &'static str,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("eigensolver failed on block {block}: {reason}")]
    Eigen { block: usize, reason: String },

    #[error("singular saddle-point system for block {block} (condition estimate {condition:.3e})")]
    SingularKkt { block: usize, condition: f64 },

    #[error("rank-deficient basis; offending blocks: {blocks:?}")]
    RankDeficient { blocks: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
