use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("sequence of {len} tokens exceeds the model limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("dialogue context is empty")]
    EmptyContext,
    #[error("dialogue roles must alternate (utterance {0} repeats the previous speaker)")]
    RolesNotAlternating(usize),
    #[error("response is empty after tokenization")]
    EmptyResponse,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("ranking instance {0} has no relevant candidate")]
    NoRelevant(usize),
    #[error("sample {sample}: {message}")]
    Rating { sample: String, message: String },
    #[error("dataset yields no training quadruples")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (records {records:?})")]
    Diverged { step: u64, records: Vec<String> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
