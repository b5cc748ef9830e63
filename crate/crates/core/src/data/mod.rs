//! Dataset model for MUSHRA speaker-similarity evaluations.
//!
//! An evaluation example pairs a source and a reference utterance (each
//! represented by a speaker embedding) with the raw per-listener scores it
//! received. Datasets are immutable after construction and safe to share
//! read-only across workers.

mod io;
mod pieces;
mod synth;

pub use io::{
    load_dataset, parse_embeddings_jsonl, parse_evaluations_jsonl, save_dataset, save_truth_table,
};
pub use pieces::split_into_pieces;
pub use synth::{generate_synthetic, SimilarityCurve, SyntheticWorldConfig};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A fixed-dimension speaker embedding identified by utterance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub id: String,
    pub vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding {id}")));
        }
        Ok(Self { id, vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// One listener's score for one example, in MUSHRA units (0 to 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerScore {
    pub listener_id: String,
    pub score: f64,
}

/// One source/reference utterance pair together with its listener scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationExample {
    pub example_id: String,
    pub cycle_id: String,
    pub system_id: String,
    pub target_speaker_id: String,
    pub source_embedding_id: String,
    pub reference_embedding_id: String,
    pub scores: Vec<ListenerScore>,
}

/// A source/reference piece-embedding pair produced by sub-utterance
/// splitting. Pieces inherit the parent example's score list.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecePair {
    pub source: SpeakerEmbedding,
    pub reference: SpeakerEmbedding,
}

/// A complete evaluation dataset: utterance embeddings, scored examples and
/// optionally per-example sub-utterance piece pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationDataset {
    embeddings: IndexMap<String, SpeakerEmbedding>,
    examples: Vec<EvaluationExample>,
    pieces: Option<IndexMap<String, Vec<PiecePair>>>,
    dim: usize,
}

impl EvaluationDataset {
    /// Build a dataset and check every structural invariant: shared embedding
    /// dimension (>= 2), score ranges, unique listeners per example, no
    /// dangling embedding references.
    pub fn new(
        embeddings: Vec<SpeakerEmbedding>,
        examples: Vec<EvaluationExample>,
    ) -> Result<Self> {
        let mut map = IndexMap::with_capacity(embeddings.len());
        let mut dim = 0usize;
        for emb in embeddings {
            if dim == 0 {
                dim = emb.dim();
            } else if emb.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: emb.dim(),
                    context: format!("embedding {}", emb.id),
                });
            }
            if emb.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding {}", emb.id)));
            }
            let id = emb.id.clone();
            if map.insert(id.clone(), emb).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate embedding id {id}")));
            }
        }
        if dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "embedding dimension must be >= 2, got {dim}"
            )));
        }
        for ex in &examples {
            validate_example(ex, &map)?;
        }
        Ok(Self {
            embeddings: map,
            examples,
            pieces: None,
            dim,
        })
    }

    pub(crate) fn with_pieces(mut self, pieces: IndexMap<String, Vec<PiecePair>>) -> Result<Self> {
        if self.pieces.is_some() {
            return Err(Error::PiecesAlreadyPresent);
        }
        let known: std::collections::HashSet<&str> =
            self.examples.iter().map(|e| e.example_id.as_str()).collect();
        for (example_id, pairs) in &pieces {
            if !known.contains(example_id.as_str()) {
                return Err(Error::UnknownId(format!("piece parent {example_id}")));
            }
            if pairs.is_empty() {
                return Err(Error::EmptyInput(format!("piece list of {example_id}")));
            }
            for pair in pairs {
                for emb in [&pair.source, &pair.reference] {
                    if emb.dim() != self.dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.dim,
                            got: emb.dim(),
                            context: format!("piece embedding {}", emb.id),
                        });
                    }
                }
            }
        }
        self.pieces = Some(pieces);
        Ok(self)
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &IndexMap<String, SpeakerEmbedding> {
        &self.embeddings
    }

    pub fn embedding(&self, id: &str) -> Result<&SpeakerEmbedding> {
        self.embeddings
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn examples(&self) -> &[EvaluationExample] {
        &self.examples
    }

    pub fn example(&self, example_id: &str) -> Result<&EvaluationExample> {
        self.examples
            .iter()
            .find(|e| e.example_id == example_id)
            .ok_or_else(|| Error::UnknownId(example_id.to_string()))
    }

    pub fn pieces(&self) -> Option<&IndexMap<String, Vec<PiecePair>>> {
        self.pieces.as_ref()
    }

    /// Source and reference embedding vectors of an example.
    pub fn example_vectors(&self, ex: &EvaluationExample) -> Result<(&[f64], &[f64])> {
        let src = self.embedding(&ex.source_embedding_id)?;
        let rf = self.embedding(&ex.reference_embedding_id)?;
        Ok((&src.vector, &rf.vector))
    }

    /// Content hash over the canonical serialized form; identifies the
    /// dataset in checkpoints and run manifests independent of file paths.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for line in io::evaluation_lines(self) {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        for line in io::embedding_lines(self) {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

fn validate_example(
    ex: &EvaluationExample,
    embeddings: &IndexMap<String, SpeakerEmbedding>,
) -> Result<()> {
    if ex.scores.is_empty() {
        return Err(Error::EmptyScores {
            example_id: ex.example_id.clone(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for s in &ex.scores {
        if !(0.0..=100.0).contains(&s.score) || !s.score.is_finite() {
            return Err(Error::ScoreOutOfRange {
                path: String::new(),
                line: 0,
                score: s.score,
            });
        }
        if !seen.insert(s.listener_id.as_str()) {
            return Err(Error::DuplicateListener {
                example_id: ex.example_id.clone(),
                listener_id: s.listener_id.clone(),
            });
        }
    }
    for emb_id in [&ex.source_embedding_id, &ex.reference_embedding_id] {
        if !embeddings.contains_key(emb_id) {
            return Err(Error::DanglingReference {
                example_id: ex.example_id.clone(),
                embedding_id: emb_id.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example(
        id: &str,
        src: &str,
        rf: &str,
        scores: &[(&str, f64)],
    ) -> EvaluationExample {
        EvaluationExample {
            example_id: id.to_string(),
            cycle_id: "cyc000".to_string(),
            system_id: "sys000".to_string(),
            target_speaker_id: "spk000".to_string(),
            source_embedding_id: src.to_string(),
            reference_embedding_id: rf.to_string(),
            scores: scores
                .iter()
                .map(|(l, s)| ListenerScore {
                    listener_id: l.to_string(),
                    score: *s,
                })
                .collect(),
        }
    }

    fn emb(id: &str, v: &[f64]) -> SpeakerEmbedding {
        SpeakerEmbedding::new(id, v.to_vec()).unwrap()
    }

    #[test]
    fn dataset_validates_invariants() {
        let ds = EvaluationDataset::new(
            vec![emb("a", &[0.0, 1.0]), emb("b", &[1.0, 0.0])],
            vec![example("e0", "a", "b", &[("l0", 50.0)])],
        )
        .unwrap();
        assert_eq!(ds.embedding_dim(), 2);
        assert_eq!(ds.examples().len(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = EvaluationDataset::new(
            vec![emb("a", &[0.0, 1.0, 2.0]), emb("b", &[1.0, 0.0, 0.0, 0.0])],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 4, .. }));
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let err = EvaluationDataset::new(
            vec![emb("a", &[0.0, 1.0]), emb("b", &[1.0, 0.0])],
            vec![example("e0", "a", "missing", &[("l0", 50.0)])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingReference { .. }));
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let err = EvaluationDataset::new(
            vec![emb("a", &[0.0, 1.0]), emb("b", &[1.0, 0.0])],
            vec![example("e0", "a", "b", &[("l0", 101.0)])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ScoreOutOfRange { .. }));
    }

    #[test]
    fn duplicate_listener_is_rejected() {
        let err = EvaluationDataset::new(
            vec![emb("a", &[0.0, 1.0]), emb("b", &[1.0, 0.0])],
            vec![example("e0", "a", "b", &[("l0", 10.0), ("l0", 20.0)])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateListener { .. }));
    }

    #[test]
    fn fingerprint_is_stable_and_content_sensitive() {
        let make = |score| {
            EvaluationDataset::new(
                vec![emb("a", &[0.0, 1.0]), emb("b", &[1.0, 0.0])],
                vec![example("e0", "a", "b", &[("l0", score)])],
            )
            .unwrap()
        };
        assert_eq!(make(50.0).fingerprint(), make(50.0).fingerprint());
        assert_ne!(make(50.0).fingerprint(), make(51.0).fingerprint());
    }
}
