//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending key.
    #[error("configuration error: {0}")]
    Config(String),

    /// A vector or matrix dimension did not match what an operation expects.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A gradient tape was consumed twice.
    #[error("gradient tape already consumed")]
    TapeReused,

    /// Training produced a non-finite gradient.
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    /// A network parameter became non-finite.
    #[error("non-finite parameter in layer {layer} (episode {episode}, step {step})")]
    NonFiniteParam {
        layer: usize,
        episode: usize,
        step: usize,
    },

    /// Domain violation in a pure numeric function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Curve-fit input outside the model's domain.
    #[error("fit domain error: {0}")]
    FitDomain(String),

    /// Degenerate design matrix in a least-squares fit.
    #[error("singular fit: {0}")]
    Singular(String),

    /// A timeline operation ran out of order.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// Positive payload with a zero-rate link.
    #[error("unreachable link from server {from} to server {to}")]
    UnreachableLink { from: usize, to: usize },

    /// Action id outside {0..U}.
    #[error("action {action} out of range (max {max})")]
    Action { action: usize, max: usize },

    /// step() called on a finished episode.
    #[error("episode already done")]
    EpisodeDone,

    /// Replay buffer does not yet hold a full batch.
    #[error("replay buffer not ready: {size} < {batch}")]
    BufferNotReady { size: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
