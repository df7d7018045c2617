use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid argument `{name}`: {reason}")]
    Argument { name: &'static str, reason: String },
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("singular evaluation: value {value} at interior node {node}")]
    Singular { node: usize, value: f64 },
    #[error("eigen iteration failed after {iterations} iterations: {reason}")]
    Eigen {
        iterations: usize,
        reason: String,
        lambda_history: Vec<f64>,
    },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("barrier construction failed: {0}")]
    Barrier(String),
    #[error("inner solve did not converge at outer iteration {iteration} (residual {residual:e})")]
    InnerSolve { iteration: usize, residual: f64 },
    #[error("config line {line}: key `{key}`: {reason}")]
    Config {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Argument {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
