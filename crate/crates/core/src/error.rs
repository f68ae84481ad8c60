use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("token {token} outside vocabulary 1..={vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("sequence length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    Divergence { step: usize, batch_seed: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;
