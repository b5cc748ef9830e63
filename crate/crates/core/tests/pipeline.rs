//! Cross-module integration: embedder exports feed the dataset model and
//! the distance baseline; regression results respect the listener-agreement
//! bound on noisy data.

use simscore_core::data::{
    load_dataset, save_dataset, generate_synthetic, EvaluationDataset, EvaluationExample,
    ListenerScore, SyntheticWorldConfig,
};
use simscore_core::distance::{baseline_correlation, DistanceMetric};
use simscore_core::embedder::{train_toy_embedder, CorpusConfig, EncoderConfig, Objective};
use simscore_core::nn::loss::{LossKind, LossSpec};
use simscore_core::stats::listener_split_upper_bound;
use simscore_core::train::{cross_validate, CvPlan, Grouping, NetConfig, TrainConfig};

/// Pair held-out embeddings into identity-scored examples: 100 for
/// same-speaker pairs, 0 otherwise, from a single oracle listener plus a
/// jittered second listener so splits stay well-defined.
fn identity_dataset(
    embeddings: Vec<simscore_core::data::SpeakerEmbedding>,
    speaker_of: &std::collections::BTreeMap<String, String>,
) -> EvaluationDataset {
    let mut examples = Vec::new();
    let n = embeddings.len();
    let mut pair_idx = 0;
    for i in 0..n {
        for j in (i + 1..n).step_by(7) {
            let (a, b) = (&embeddings[i], &embeddings[j]);
            let same = speaker_of[&a.id] == speaker_of[&b.id];
            let score = if same { 100.0 } else { 0.0 };
            examples.push(EvaluationExample {
                example_id: format!("pair{pair_idx:05}"),
                cycle_id: "cyc000".into(),
                system_id: "toy".into(),
                target_speaker_id: speaker_of[&b.id].clone(),
                source_embedding_id: a.id.clone(),
                reference_embedding_id: b.id.clone(),
                scores: vec![ListenerScore {
                    listener_id: "oracle".into(),
                    score,
                }],
            });
            pair_idx += 1;
        }
    }
    EvaluationDataset::new(embeddings, examples).unwrap()
}

#[test]
fn embedder_exports_drive_the_distance_baseline() {
    let outcome = train_toy_embedder(
        Objective::Ge2e,
        &CorpusConfig::default(),
        &EncoderConfig::default(),
        17,
    )
    .unwrap();
    let ds = identity_dataset(outcome.embeddings.clone(), &outcome.speaker_of);

    // The file formats carry the exported embeddings losslessly.
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("evaluations.jsonl");
    let em = dir.path().join("embeddings.jsonl");
    save_dataset(&ds, &ev, &em).unwrap();
    let loaded = load_dataset(&ev, &em).unwrap();
    assert_eq!(ds, loaded);

    // A trained embedder separates speakers, so cosine distance anticorrelates
    // with the identity score.
    let r = baseline_correlation(&loaded, DistanceMetric::Cosine).unwrap();
    assert!(r < -0.8, "baseline correlation {r}");
}

/// Pooled CV Pearson stays at or below the listener-agreement bound on a
/// noisy synthetic world.
#[test]
fn regression_respects_listener_agreement_bound() {
    let cfg = SyntheticWorldConfig {
        n_examples: 400,
        n_listeners: 12,
        listener_noise_sd: 20.0,
        listener_bias_sd: 5.0,
        embedding_dim: 8,
        rng_seed: 5,
        ..SyntheticWorldConfig::default()
    };
    let (ds, _) = generate_synthetic(&cfg).unwrap();
    let ub = listener_split_upper_bound(&ds, 50, 31).unwrap();
    let plan = CvPlan::new(&ds, 5, Grouping::ByExample, 7).unwrap();
    let result = cross_validate(
        &ds,
        &LossSpec::new(LossKind::Mahalanobis),
        &NetConfig {
            hidden_dim: 64,
            ..NetConfig::default()
        },
        &TrainConfig {
            epochs: 80,
            ..TrainConfig::default()
        },
        &plan,
    )
    .unwrap();
    assert!(
        result.pooled.pearson <= ub.pearson_mean + ub.pearson_sd,
        "pooled {} vs bound {} + {}",
        result.pooled.pearson,
        ub.pearson_mean,
        ub.pearson_sd
    );
    // sanity: the model still learned something real
    assert!(result.pooled.pearson > 0.5, "pooled {}", result.pooled.pearson);
}
