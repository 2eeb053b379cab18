use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A candidate factorization does not induce a valid transition kernel.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Should be unreachable for a contraction; signals a bug if it fires.
    #[error("value iteration did not converge within {max_iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        max_iterations: usize,
        residual: f64,
    },

    #[error("model class is empty")]
    EmptyModelClass,

    /// The behavior policy assigns zero probability to some action, so its
    /// worst-case inverse action probability is unbounded.
    #[error("behavior policy has a zero-probability action; omega is unbounded")]
    UnboundedOmega,

    #[error("infeasible environment spec: {0}")]
    Generation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// CLI exit code classification: validation failures map to 1, I/O to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
