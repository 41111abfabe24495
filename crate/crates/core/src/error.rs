use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inputs outside the operation's domain (label mismatch, bad shapes, size guards).
    #[error("domain error: {0}")]
    Domain(String),
    /// A documented precondition of the operation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded linear program")]
    Unbounded,
    /// Cyclical monotonicity fails; carries the offending cycle.
    #[error("not cyclically monotone for agent {agent}: cycle {cycle:?} has slack {slack}")]
    NotMonotone {
        agent: usize,
        cycle: Vec<String>,
        slack: f64,
    },
    /// An internal invariant was violated during simulation.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
