use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model is unstable (spectral radius {radius:.6})")]
    Unstable { radius: f64 },

    #[error("no stable model after {attempts} attempts")]
    StabilityNotReached { attempts: usize },

    #[error("simulation diverged: non-finite value at sample {sample}, node {node}")]
    Diverged { sample: usize, node: usize },

    #[error("singular matrix: {context} (smallest eigenvalue {min_eigenvalue:.3e})")]
    Singular {
        context: String,
        min_eigenvalue: f64,
    },

    #[error("zero-norm coefficient block on active edge {from} -> {to}")]
    ZeroConnection { from: usize, to: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("not enough data: {0}")]
    TooShort(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
