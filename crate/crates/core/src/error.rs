use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller violated an operation's contract (dimension mismatch,
    /// empty input, out-of-range argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The cell state stopped being finite during an LE run.
    #[error("non-finite state at step {step} (variant {variant_id})")]
    NonFiniteState { step: usize, variant_id: String },

    /// Training diverged beyond recovery.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A file had the wrong structure.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    /// A JSONL record failed to parse or validate.
    #[error("record error at line {line}: {message}")]
    Record { line: usize, message: String },

    /// A pipeline stage is missing an upstream artifact.
    #[error("missing artifact {path}; run `{produced_by}` first")]
    MissingArtifact { path: String, produced_by: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl CoreError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
