use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for {op} on tensor of rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite value in {op} at position {position}")]
    NonFinite { op: &'static str, position: usize },

    #[error("backward already ran on this tape; call zero_grad before running it again")]
    BackwardTwice,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("feature provider `{provider}` supplies {got} rows but the utterance has {expected} phones")]
    Alignment {
        provider: String,
        expected: usize,
        got: usize,
    },

    #[error("utterance length {len} exceeds absolute position capacity {capacity}")]
    Capacity { len: usize, capacity: usize },

    #[error("malformed utterance `{utt_id}`: {msg}")]
    Structure { utt_id: String, msg: String },

    #[error("corpus validation failed for {} utterance(s): {}", .0.len(), .0.join("; "))]
    Corpus(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint does not match configuration: {0}")]
    Checkpoint(String),

    #[error("gradient for parameter `{0}` is not finite")]
    NanGradient(String),

    #[error("training diverged at step {step}: total loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for input/validation problems, 2 for runtime and
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Alignment { .. }
            | Error::Capacity { .. }
            | Error::Structure { .. }
            | Error::Corpus(_)
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Json { .. } => 1,
            _ => 2,
        }
    }
}
