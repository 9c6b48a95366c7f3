use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("round {round} outside 1..={horizon}")]
    RoundOutOfRange { round: usize, horizon: usize },
    #[error("need at least {min} entries, got {got}")]
    Arity { min: usize, got: usize },
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
    #[error("invalid bid policy: {0}")]
    InvalidPolicy(String),
    #[error("operation requires a fixed valuation schedule")]
    UnsupportedMode,
    #[error("confidence bonus is undefined for zero pulls")]
    ZeroPulls,
    #[error("estimator is not warmed up: ad {0} has no pulls")]
    NotWarm(usize),
    #[error("run record carries no estimator snapshots (enable tracing)")]
    MissingSnapshots,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
}

pub(crate) fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, index, len })
    }
}
