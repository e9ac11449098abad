use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("infeasible kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid site distribution: {0}")]
    InvalidDistribution(String),

    #[error("the origin carries no sleeping frogs")]
    OriginQuery,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point} lies outside {window}")]
    OutsideWindow { point: String, window: String },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("block {0} is empty")]
    EmptyBlock(usize),

    #[error("not enough values: plan needs {needed}, got {got}")]
    ShortInput { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
