use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LsirError>;

#[derive(Debug, Error)]
pub enum LsirError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: id `{id}` is not present in the interactions file")]
    Reference {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("checkpoint does not match dataset: {0}")]
    Incompatible(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LsirError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LsirError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LsirError::Config(_) => 1,
            LsirError::NonFiniteGradient { .. } | LsirError::Diverged { .. } => 3,
            _ => 2,
        }
    }
}
