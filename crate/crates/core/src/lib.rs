//! Prediction of perceptual speaker-similarity (MUSHRA) scores from pairs of
//! speaker embeddings.
//!
//! The crate covers the full evaluation pipeline at desk scale:
//!
//! - [`data`] — dataset model, JSONL formats, synthetic world generation and
//!   sub-utterance splitting;
//! - [`stats`] — listener score statistics, correlation/error metrics,
//!   density weights and the listener-agreement upper bound;
//! - [`distance`] — embedding distance metrics and the distance-vs-score
//!   baseline;
//! - [`nn`] — dense network forward/backward, losses (including the
//!   sigma-normalized absolute-error loss) and the Adam optimizer;
//! - [`train`] — training loop, k-fold cross-validation, prediction and
//!   checkpoints;
//! - [`embedder`] — toy speaker-embedding training with GE2E or pairwise
//!   binary-classification objectives.

pub mod data;
pub mod distance;
pub mod embedder;
pub mod error;
pub mod nn;
pub mod seed;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
