use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("out of bounds in {op}: {detail}")]
    Bounds { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("fixed context length is {expected} but input has {actual} rows")]
    FixedContext { expected: usize, actual: usize },

    #[error("training diverged (seed {seed}, step {step})")]
    Divergence { seed: u64, step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used by the CLI for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Bounds { .. } => "bounds",
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::FixedContext { .. } => "fixed_context",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
