//! Many-to-many fine-grained prosody transfer for neural TTS, sized for a desk.
//!
//! The pipeline predicts mel-spectrograms from upsampled phonemes, a prosodic
//! reference mel, and speaker embeddings:
//!
//! * [`nn`] — differentiable array primitives with reverse-mode gradients,
//!   including the instance-norm math the reference encoder relies on.
//! * [`features`] — log-mel extraction, duration files, phoneme upsampling,
//!   and a classical mel inverter for listening checks.
//! * [`corpus`] — a synthetic multi-speaker corpus generator plus dataset
//!   loading, normalization, and batching.
//! * [`speaker`] — the bottlenecked speaker classifier that provides
//!   utterance embeddings and per-speaker centroids.
//! * [`reference_encoder`] — instance-normed conv stack, bi-GRU, conditional
//!   variational posterior, and the temporal bottleneck.
//! * [`synthesis`] — phoneme encoder and the parallel mel decoder.
//! * [`adversarial`] — windowed self-attention discriminator and hinge losses.
//! * [`trainer`] — two-stage optimization, KL annealing, checkpoints.
//! * [`evaluation`] — cycle consistency, speaker-leakage probes, and
//!   energy-contour correlation.

pub mod adversarial;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod nn;
pub mod reference_encoder;
pub mod speaker;
pub mod synthesis;
pub mod trainer;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("alignment mismatch: {0}")]
    Alignment(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("missing prerequisite: {0}")]
    MissingStage(String),
    #[error("training failed at step {step}: {message}")]
    Training { step: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
