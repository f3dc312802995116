//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value or an invalid plan.
    #[error("config error: {0}")]
    Config(String),

    /// Text contains a character outside the closed vocabulary.
    #[error("codec error: unknown symbol starting at byte {position}: {snippet:?}")]
    Codec { position: usize, snippet: String },

    /// Token id outside the vocabulary.
    #[error("codec error: token id {0} out of range")]
    BadTokenId(u32),

    /// Sequence does not fit the model context window.
    #[error("length error: sequence of {len} tokens exceeds context of {max}")]
    ContextOverflow { len: usize, max: usize },

    /// Internal consistency violation (misaligned tables, c > n, ...).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// NaN/Inf encountered during training.
    #[error("non-finite {what}: {diagnostics}")]
    NonFinite { what: String, diagnostics: String },

    /// Checkpoint file malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A required artifact is missing; names the command that produces it.
    #[error("missing artifact {path:?}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    /// Refusal to overwrite an existing artifact without --force.
    #[error("artifact {0:?} already exists (use --force to overwrite)")]
    WouldOverwrite(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}
