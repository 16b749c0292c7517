//! Error type shared by every solver and the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Scenario validation collects every violation, not just the first.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Scenario(Vec<String>),

    #[error("infeasible boundaries: {0}")]
    InfeasibleBoundaries(String),

    #[error("terminal condition violated: {0}")]
    TerminalCondition(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code contract: 1 config/input, 2 convergence, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence(_) => 2,
            Error::InvariantViolation(_)
            | Error::InfeasibleBoundaries(_)
            | Error::TerminalCondition(_) => 3,
            _ => 1,
        }
    }
}
