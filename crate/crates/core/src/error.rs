use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("user index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("degenerate linearization point: {0}")]
    DegenerateLinearization(String),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("solver contract violation: {0}")]
    SolverContract(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
