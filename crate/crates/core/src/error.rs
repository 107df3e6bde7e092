use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("backward root must be a scalar node, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite gradient at node {node}")]
    NonFiniteGradient { node: usize },
    #[error("backward already ran on this graph; build a fresh graph")]
    BackwardAlreadyRan,
    #[error("non-finite function value during finite-difference check")]
    NonFiniteObjective,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty target")]
    EmptyTarget,
    #[error("negative candidate scale {0}")]
    NegativeScale(f64),
    #[error("missing model-generated sequence for unlikelihood mode {0}")]
    MissingGenerated(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no tokens to count")]
    NoTokens,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("truncated checkpoint")]
    TruncatedCheckpoint,
    #[error("{path}:{line}: {msg}")]
    Corpus { path: PathBuf, line: usize, msg: String },
    #[error("non-finite gradient during optimization (parameter {param})")]
    NonFiniteUpdate { param: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
