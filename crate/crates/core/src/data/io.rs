//! JSON Lines formats for evaluations, embeddings and latent truth tables.
//!
//! Floats are serialized with shortest-round-trip formatting, so a
//! save/load cycle reproduces every stored value exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EvaluationDataset, EvaluationExample, PiecePair, SpeakerEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PieceSide {
    Source,
    Reference,
}

/// One line of the embeddings file. Piece embeddings carry the three
/// optional fields; utterance embeddings omit them.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    piece_of: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<PieceSide>,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRecord {
    example_id: String,
    latent_score: f64,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for line in lines {
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Parse the evaluations JSONL format. Malformed records and out-of-range
/// scores are reported with their line number.
pub fn parse_evaluations_jsonl(text: &str, path_label: &str) -> Result<Vec<EvaluationExample>> {
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: EvaluationExample =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                path: path_label.to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        for s in &ex.scores {
            if !(0.0..=100.0).contains(&s.score) || !s.score.is_finite() {
                return Err(Error::ScoreOutOfRange {
                    path: path_label.to_string(),
                    line: idx + 1,
                    score: s.score,
                });
            }
        }
        examples.push(ex);
    }
    Ok(examples)
}

/// Intermediate piece entry produced by the embeddings parser.
#[derive(Debug)]
pub struct ParsedPiece {
    pub piece_of: String,
    pub side_is_source: bool,
    pub index: u32,
    pub embedding: SpeakerEmbedding,
}

/// Parse the embeddings JSONL format into utterance embeddings and piece
/// entries. Records with any of the piece fields must carry all three.
pub fn parse_embeddings_jsonl(
    text: &str,
    path_label: &str,
) -> Result<(Vec<SpeakerEmbedding>, Vec<ParsedPiece>)> {
    let mut utterances = Vec::new();
    let mut pieces = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path_label.to_string(),
            line: idx + 1,
            message,
        };
        let rec: EmbeddingRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!("non-finite component in embedding {}", rec.id)));
        }
        match (rec.piece_of, rec.side, rec.index) {
            (None, None, None) => {
                utterances.push(SpeakerEmbedding {
                    id: rec.id,
                    vector: rec.vector,
                });
            }
            (Some(piece_of), Some(side), Some(index)) => {
                pieces.push(ParsedPiece {
                    piece_of,
                    side_is_source: side == PieceSide::Source,
                    index,
                    embedding: SpeakerEmbedding {
                        id: rec.id,
                        vector: rec.vector,
                    },
                });
            }
            _ => {
                return Err(malformed(
                    "piece_of, side and index must be given together".to_string(),
                ));
            }
        }
    }
    Ok((utterances, pieces))
}

/// (index -> (source, reference)) slots of one parent example.
type PieceSlots = std::collections::BTreeMap<u32, (Option<SpeakerEmbedding>, Option<SpeakerEmbedding>)>;

fn assemble_pieces(
    examples: &[EvaluationExample],
    parsed: Vec<ParsedPiece>,
    path_label: &str,
) -> Result<IndexMap<String, Vec<PiecePair>>> {
    let mut grouped: IndexMap<String, PieceSlots> = IndexMap::new();
    for p in parsed {
        let slot = grouped.entry(p.piece_of).or_default().entry(p.index).or_default();
        let side = if p.side_is_source { &mut slot.0 } else { &mut slot.1 };
        if side.replace(p.embedding).is_some() {
            return Err(Error::MalformedRecord {
                path: path_label.to_string(),
                line: 0,
                message: "duplicate piece record (same parent, side and index)".to_string(),
            });
        }
    }
    // Reorder by example order so that save(load(f)) is byte-stable.
    let mut out = IndexMap::new();
    for ex in examples {
        let Some(slots) = grouped.swap_remove(&ex.example_id) else {
            continue;
        };
        let mut pairs = Vec::with_capacity(slots.len());
        for (expected, (index, slot)) in slots.into_iter().enumerate() {
            if index as usize != expected {
                return Err(Error::MalformedRecord {
                    path: path_label.to_string(),
                    line: 0,
                    message: format!(
                        "piece indices of {} are not contiguous from 0",
                        ex.example_id
                    ),
                });
            }
            match slot {
                (Some(source), Some(reference)) => pairs.push(PiecePair { source, reference }),
                _ => {
                    return Err(Error::MalformedRecord {
                        path: path_label.to_string(),
                        line: 0,
                        message: format!(
                            "piece {index} of {} is missing one side",
                            ex.example_id
                        ),
                    });
                }
            }
        }
        out.insert(ex.example_id.clone(), pairs);
    }
    if let Some((orphan, _)) = grouped.into_iter().next() {
        return Err(Error::UnknownId(format!("piece parent {orphan}")));
    }
    Ok(out)
}

/// Load a dataset from the evaluations and embeddings files.
pub fn load_dataset(evaluations_path: &Path, embeddings_path: &Path) -> Result<EvaluationDataset> {
    let eval_text = read_file(evaluations_path)?;
    let emb_text = read_file(embeddings_path)?;
    let eval_label = evaluations_path.display().to_string();
    let emb_label = embeddings_path.display().to_string();
    let examples = parse_evaluations_jsonl(&eval_text, &eval_label)?;
    let (utterances, parsed_pieces) = parse_embeddings_jsonl(&emb_text, &emb_label)?;
    let dataset = EvaluationDataset::new(utterances, examples)?;
    if parsed_pieces.is_empty() {
        return Ok(dataset);
    }
    let pieces = assemble_pieces(dataset.examples(), parsed_pieces, &emb_label)?;
    dataset.with_pieces(pieces)
}

pub(super) fn evaluation_lines(ds: &EvaluationDataset) -> Vec<String> {
    ds.examples()
        .iter()
        .map(|ex| serde_json::to_string(ex).expect("example serializes"))
        .collect()
}

pub(super) fn embedding_lines(ds: &EvaluationDataset) -> Vec<String> {
    let mut lines: Vec<String> = ds
        .embeddings()
        .values()
        .map(|emb| {
            serde_json::to_string(&EmbeddingRecord {
                id: emb.id.clone(),
                vector: emb.vector.clone(),
                piece_of: None,
                side: None,
                index: None,
            })
            .expect("embedding serializes")
        })
        .collect();
    if let Some(pieces) = ds.pieces() {
        for (example_id, pairs) in pieces {
            for (index, pair) in pairs.iter().enumerate() {
                for (emb, side) in [
                    (&pair.source, PieceSide::Source),
                    (&pair.reference, PieceSide::Reference),
                ] {
                    lines.push(
                        serde_json::to_string(&EmbeddingRecord {
                            id: emb.id.clone(),
                            vector: emb.vector.clone(),
                            piece_of: Some(example_id.clone()),
                            side: Some(side),
                            index: Some(index as u32),
                        })
                        .expect("piece embedding serializes"),
                    );
                }
            }
        }
    }
    lines
}

/// Write a dataset back to the two JSONL files.
pub fn save_dataset(
    ds: &EvaluationDataset,
    evaluations_path: &Path,
    embeddings_path: &Path,
) -> Result<()> {
    write_lines(evaluations_path, &evaluation_lines(ds))?;
    write_lines(embeddings_path, &embedding_lines(ds))
}

/// Write the synthetic latent truth table.
pub fn save_truth_table(truth: &IndexMap<String, f64>, path: &Path) -> Result<()> {
    let lines: Vec<String> = truth
        .iter()
        .map(|(example_id, latent_score)| {
            serde_json::to_string(&TruthRecord {
                example_id: example_id.clone(),
                latent_score: *latent_score,
            })
            .expect("truth record serializes")
        })
        .collect();
    write_lines(path, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_EXAMPLES: &str = concat!(
        r#"{"example_id":"e0","cycle_id":"c0","system_id":"s0","target_speaker_id":"t0","source_embedding_id":"a","reference_embedding_id":"b","scores":[{"listener_id":"l0","score":40.5},{"listener_id":"l1","score":62.0}]}"#,
        "\n",
        r#"{"example_id":"e1","cycle_id":"c0","system_id":"s1","target_speaker_id":"t0","source_embedding_id":"c","reference_embedding_id":"d","scores":[{"listener_id":"l0","score":10.0}]}"#,
        "\n",
    );

    const FOUR_EMBEDDINGS: &str = concat!(
        r#"{"id":"a","vector":[0.125,-1.5,3.0]}"#,
        "\n",
        r#"{"id":"b","vector":[1.0,0.0,0.25]}"#,
        "\n",
        r#"{"id":"c","vector":[0.5,0.5,0.5]}"#,
        "\n",
        r#"{"id":"d","vector":[-0.25,2.0,1.0]}"#,
        "\n",
    );

    fn write_pair(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let ev = dir.join("evaluations.jsonl");
        let em = dir.join("embeddings.jsonl");
        fs::write(&ev, TWO_EXAMPLES).unwrap();
        fs::write(&em, FOUR_EMBEDDINGS).unwrap();
        (ev, em)
    }

    #[test]
    fn loads_two_example_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ev, em) = write_pair(dir.path());
        let ds = load_dataset(&ev, &em).unwrap();
        assert_eq!(ds.examples().len(), 2);
        assert_eq!(ds.embeddings().len(), 4);
        assert_eq!(ds.embedding_dim(), 3);
    }

    #[test]
    fn score_out_of_range_reports_line() {
        let bad = TWO_EXAMPLES.replace("62.0", "101.0");
        let err = parse_evaluations_jsonl(&bad, "evals.jsonl").unwrap_err();
        match err {
            Error::ScoreOutOfRange { path, line, score } => {
                assert_eq!(path, "evals.jsonl");
                assert_eq!(line, 1);
                assert_eq!(score, 101.0);
            }
            other => panic!("expected ScoreOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = format!("{TWO_EXAMPLES}{{not json\n");
        let err = parse_evaluations_jsonl(&text, "evals.jsonl").unwrap_err();
        match err {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 3),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn mixed_dimension_embeddings_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ev, em) = write_pair(dir.path());
        fs::write(&em, FOUR_EMBEDDINGS.replace("[1.0,0.0,0.25]", "[1.0,0.0,0.25,0.5]")).unwrap();
        let err = load_dataset(&ev, &em).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 4, .. }));
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (ev, em) = write_pair(dir.path());
        let ds = load_dataset(&ev, &em).unwrap();
        let ev2 = dir.path().join("evals2.jsonl");
        let em2 = dir.path().join("embs2.jsonl");
        save_dataset(&ds, &ev2, &em2).unwrap();
        let ds2 = load_dataset(&ev2, &em2).unwrap();
        assert_eq!(ds, ds2);
        let ev3 = dir.path().join("evals3.jsonl");
        let em3 = dir.path().join("embs3.jsonl");
        save_dataset(&ds2, &ev3, &em3).unwrap();
        assert_eq!(fs::read(&ev2).unwrap(), fs::read(&ev3).unwrap());
        assert_eq!(fs::read(&em2).unwrap(), fs::read(&em3).unwrap());
    }

    #[test]
    fn incomplete_piece_fields_rejected() {
        let text = r#"{"id":"p0","vector":[1.0,2.0],"piece_of":"e0"}"#;
        let err = parse_embeddings_jsonl(text, "embs.jsonl").unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { .. }));
    }
}
