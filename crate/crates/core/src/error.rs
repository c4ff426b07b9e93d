// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the engine, the tracing pipeline and the dataset builders.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    /// The weights file header could not be parsed or is inconsistent.
    #[error("malformed weights header: {0}")]
    MalformedHeader(String),

    /// A tensor's declared or stored shape disagrees with the model config.
    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checksum mismatch: header trailer says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("tokenization failed: {0}")]
    Tokenize(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite activation after layer {layer}")]
    NonFinite { layer: usize },

    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),

    #[error("reference trace does not match the run: {0}")]
    ReferenceMismatch(String),

    #[error("unknown or unsupported relation `{0}`")]
    UnknownRelation(String),

    #[error("template {template_id} of {relation} is not usable: {reason}")]
    InvalidTemplate {
        relation: String,
        template_id: usize,
        reason: String,
    },

    #[error("only {found} templates evaluated, at least {required} required")]
    InsufficientTemplates { found: usize, required: usize },

    #[error("degenerate traced token: {0}")]
    DegenerateTarget(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("split `{scenario}` holds {available} samples, {requested} requested")]
    SplitTooSmall {
        scenario: String,
        requested: usize,
        available: usize,
    },

    #[error("corpus exhausted: {found} of {requested} generic samples found")]
    CorpusExhausted { requested: usize, found: usize },

    #[error("name generation failed: {0}")]
    NameGeneration(String),

    #[error("HTTP request failed: {0}")]
    Http(String),

    #[error("invalid run configuration: {0}")]
    Config(String),

    #[error("shape mismatch between grids: {0}")]
    GridMismatch(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }
}
