use thiserror::Error;

use crate::mdp::MdpViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(#[from] MdpViolation),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular linear system: {0}")]
    Singular(&'static str),
    #[error("log-domain guard: {0}")]
    LogDomain(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("level {0} is empty")]
    EmptyLevel(usize),
    #[error("divergence detected: {0}")]
    Divergence(String),
    #[error("ranked datasets failed the ordering check after {attempts} attempts (level means {means:?})")]
    RetryBudget { attempts: usize, means: Vec<f64> },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
