//! Sub-utterance splitting.
//!
//! Pieces stand in for fixed-length segments of an utterance: each piece
//! embedding is the utterance embedding plus zero-mean jitter, and every
//! piece inherits the parent example's score list unchanged.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::{EvaluationDataset, PiecePair, SpeakerEmbedding};

/// Attach `pieces_per_utterance` piece pairs to every example.
///
/// With `piece_jitter_sd == 0` each piece embedding is bit-identical to its
/// utterance embedding. Fails if the dataset already has pieces.
pub fn split_into_pieces(
    dataset: &EvaluationDataset,
    piece_jitter_sd: f64,
    pieces_per_utterance: usize,
    rng_seed: u64,
) -> Result<EvaluationDataset> {
    if dataset.pieces().is_some() {
        return Err(Error::PiecesAlreadyPresent);
    }
    if pieces_per_utterance < 1 {
        return Err(Error::InvalidConfig("pieces_per_utterance must be >= 1".into()));
    }
    if !(piece_jitter_sd.is_finite() && piece_jitter_sd >= 0.0) {
        return Err(Error::InvalidConfig("piece_jitter_sd must be finite and >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = |vector: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        if piece_jitter_sd == 0.0 {
            return vector.to_vec();
        }
        let normal = Normal::new(0.0, piece_jitter_sd).expect("valid sd");
        vector.iter().map(|v| v + normal.sample(rng)).collect()
    };

    let mut pieces = IndexMap::with_capacity(dataset.examples().len());
    for ex in dataset.examples() {
        let (src, rf) = dataset.example_vectors(ex)?;
        let pairs: Vec<PiecePair> = (0..pieces_per_utterance)
            .map(|i| PiecePair {
                source: SpeakerEmbedding {
                    id: format!("{}-p{i:02}", ex.source_embedding_id),
                    vector: jitter(src, &mut rng),
                },
                reference: SpeakerEmbedding {
                    id: format!("{}-p{i:02}", ex.reference_embedding_id),
                    vector: jitter(rf, &mut rng),
                },
            })
            .collect();
        pieces.insert(ex.example_id.clone(), pairs);
    }
    dataset.clone().with_pieces(pieces)
}
