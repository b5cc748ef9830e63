//! Desk-scale speaker-embedding training on synthetic feature clusters.
//!
//! Two objectives from the speaker-verification literature are implemented
//! over the same small feedforward encoder: the GE2E centroid-contrast loss
//! and a pairwise same/different classifier trained with binary
//! cross-entropy. Trained encoders export embeddings in the evaluation
//! dataset format, so the rest of the pipeline can consume them.

mod ge2e;

pub use ge2e::{
    ge2e_loss_grads, ge2e_similarity_matrix, ge2e_softmax_loss, Ge2eGrads, Ge2eParams,
    SimilarityTensor, GE2E_MIN_W,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::SpeakerEmbedding;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, adam_update, AdamParams, AdamState, Activation, DenseNet, Gradients, Layer, Mode,
};
use crate::seed::derive_seed;
use crate::train::FeatureMode;

/// N x M batch of synthetic frame-statistic feature vectors, speaker-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBatch {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub features: Vec<Vec<f64>>,
}

impl SpeakerBatch {
    pub fn new(n_speakers: usize, utterances_per_speaker: usize, features: Vec<Vec<f64>>) -> Result<Self> {
        if n_speakers < 2 || utterances_per_speaker < 2 {
            return Err(Error::InvalidConfig(
                "speaker batch needs N >= 2 and M >= 2".into(),
            ));
        }
        if features.len() != n_speakers * utterances_per_speaker {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: n_speakers * utterances_per_speaker,
                context: "speaker batch features".into(),
            });
        }
        Ok(Self {
            n_speakers,
            utterances_per_speaker,
            features,
        })
    }

    pub fn feature(&self, speaker: usize, utterance: usize) -> &[f64] {
        &self.features[speaker * self.utterances_per_speaker + utterance]
    }
}

/// Training objective of the toy embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ge2e,
    PairwiseBce,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Ge2e => write!(f, "ge2e"),
            Objective::PairwiseBce => write!(f, "bce"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ge2e" => Ok(Objective::Ge2e),
            "bce" => Ok(Objective::PairwiseBce),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective {other:?}; valid values: ge2e, bce"
            ))),
        }
    }
}

/// Synthetic multi-speaker corpus: Gaussian clusters in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Held-out utterances per speaker used for the quality report.
    pub eval_utterances_per_speaker: usize,
    pub feature_dim: usize,
    /// Scale of the speaker cluster means.
    pub cluster_separation: f64,
    /// Within-speaker feature spread.
    pub cluster_spread: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utterances_per_speaker: 8,
            eval_utterances_per_speaker: 6,
            feature_dim: 16,
            cluster_separation: 1.0,
            cluster_spread: 0.3,
        }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<()> {
        if self.n_speakers < 4 || self.utterances_per_speaker < 4 {
            return Err(Error::InvalidConfig(
                "corpus needs at least 4 speakers with 4 utterances each".into(),
            ));
        }
        if self.eval_utterances_per_speaker < 2 {
            return Err(Error::InvalidConfig(
                "eval_utterances_per_speaker must be >= 2".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::InvalidConfig("feature_dim must be >= 2".into()));
        }
        for (name, v) in [
            ("cluster_separation", self.cluster_separation),
            ("cluster_spread", self.cluster_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Encoder architecture and optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub steps: usize,
    pub batch_speakers: usize,
    pub batch_utterances: usize,
    pub learning_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            embedding_dim: 8,
            leaky_slope: 0.01,
            steps: 300,
            batch_speakers: 6,
            batch_utterances: 4,
            learning_rate: 5e-3,
        }
    }
}

/// Quality summary of a trained embedder: mean within/cross-speaker cosine
/// similarity on held-out utterances and the equal error rate of the
/// same/different detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub objective: String,
    pub within_cos: f64,
    pub cross_cos: f64,
    pub eer: f64,
}

/// A trained toy embedder plus its held-out embeddings.
#[derive(Debug, Clone)]
pub struct EmbedderOutcome {
    pub encoder: DenseNet,
    pub ge2e_params: Option<Ge2eParams>,
    pub quality: QualityReport,
    /// Held-out utterance embeddings in dataset format, ids `spkJJJ-uttII`.
    pub embeddings: Vec<SpeakerEmbedding>,
    /// Embedding id -> speaker id.
    pub speaker_of: BTreeMap<String, String>,
}

fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("encoder output".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Unit-norm embedding of one feature vector.
pub fn embed(encoder: &DenseNet, feature: &[f64]) -> Result<Vec<f64>> {
    let (y, _) = encoder.forward_vec(feature, Mode::Infer)?;
    l2_normalize(&y)
}

/// Binary cross-entropy of the similarity head on one embedding pair.
///
/// The head consumes `[a, b, |a - b|]` and its scalar output is squashed
/// through the logistic function; probabilities are floored at 1e-12.
pub fn pairwise_bce_loss(
    emb_a: &[f64],
    emb_b: &[f64],
    same_speaker: bool,
    head: &DenseNet,
) -> Result<f64> {
    let input = FeatureMode::ConcatAbsDiff.build(emb_a, emb_b);
    let (logit, _) = head.forward(&input, Mode::Infer)?;
    if !logit.is_finite() {
        return Err(Error::NonFinite("similarity head output".into()));
    }
    let p = 1.0 / (1.0 + (-logit).exp());
    let y = if same_speaker { 1.0 } else { 0.0 };
    Ok(-(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln()))
}

/// Loss plus gradients for training: head parameter gradients and the
/// gradients with respect to both embeddings.
fn pairwise_bce_loss_grads(
    emb_a: &[f64],
    emb_b: &[f64],
    same_speaker: bool,
    head: &DenseNet,
) -> Result<(f64, Gradients, Vec<f64>, Vec<f64>)> {
    let input = FeatureMode::ConcatAbsDiff.build(emb_a, emb_b);
    let (logit, cache) = head.forward(&input, Mode::Infer)?;
    if !logit.is_finite() {
        return Err(Error::NonFinite("similarity head output".into()));
    }
    let p = 1.0 / (1.0 + (-logit).exp());
    let y = if same_speaker { 1.0 } else { 0.0 };
    let loss = -(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln());
    let head_grads = head.backward(&cache, p - y)?;
    let dim = emb_a.len();
    let dinput = &head_grads.input;
    let mut da = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    for d in 0..dim {
        let sign = (emb_a[d] - emb_b[d]).signum();
        da[d] = dinput[d] + dinput[2 * dim + d] * sign;
        db[d] = dinput[dim + d] - dinput[2 * dim + d] * sign;
    }
    Ok((loss, head_grads, da, db))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, sd).expect("valid sd");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

struct Corpus {
    train: Vec<Vec<Vec<f64>>>, // [speaker][utterance]
    eval: Vec<Vec<Vec<f64>>>,
}

fn generate_corpus(config: &CorpusConfig, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..config.n_speakers)
        .map(|_| gaussian_vec(&mut rng, config.feature_dim, config.cluster_separation))
        .collect();
    let utterances = |count: usize, mean: &[f64], rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                gaussian_vec(rng, config.feature_dim, config.cluster_spread)
                    .iter()
                    .zip(mean)
                    .map(|(n, m)| m + n)
                    .collect()
            })
            .collect()
    };
    let train = means
        .iter()
        .map(|m| utterances(config.utterances_per_speaker, m, &mut rng))
        .collect();
    let eval = means
        .iter()
        .map(|m| utterances(config.eval_utterances_per_speaker, m, &mut rng))
        .collect();
    Corpus { train, eval }
}

/// Equal error rate of a score-thresholded same/different detector; higher
/// scores mean "same speaker".
pub fn equal_error_rate(same_scores: &[f64], diff_scores: &[f64]) -> Result<f64> {
    if same_scores.is_empty() || diff_scores.is_empty() {
        return Err(Error::EmptyInput("equal_error_rate".into()));
    }
    let mut thresholds: Vec<f64> = same_scores.iter().chain(diff_scores).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();
    let mut best_gap = f64::INFINITY;
    let mut eer = 1.0;
    for &t in &thresholds {
        let frr = same_scores.iter().filter(|&&s| s < t).count() as f64 / same_scores.len() as f64;
        let far = diff_scores.iter().filter(|&&s| s >= t).count() as f64 / diff_scores.len() as f64;
        let gap = (far - frr).abs();
        if gap < best_gap {
            best_gap = gap;
            eer = (far + frr) / 2.0;
        }
    }
    Ok(eer)
}

fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>();
    dot / (na * nb).sqrt()
}

fn quality_report(
    objective: Objective,
    embeddings: &[Vec<Vec<f64>>],
) -> Result<QualityReport> {
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for (j, speaker) in embeddings.iter().enumerate() {
        for (i, e) in speaker.iter().enumerate() {
            for other in &speaker[i + 1..] {
                same.push(cosine_sim(e, other));
            }
            for other_speaker in &embeddings[j + 1..] {
                for other in other_speaker {
                    diff.push(cosine_sim(e, other));
                }
            }
        }
    }
    Ok(QualityReport {
        objective: objective.to_string(),
        within_cos: crate::stats::mean(&same),
        cross_cos: crate::stats::mean(&diff),
        eer: equal_error_rate(&same, &diff)?,
    })
}

/// Backpropagate an embedding-space gradient through the L2 normalization
/// and the encoder, accumulating parameter gradients.
fn accumulate_encoder_grads(
    encoder: &DenseNet,
    feature: &[f64],
    d_embedding: &[f64],
    scale: f64,
    acc: &mut Gradients,
) -> Result<()> {
    let (y, cache) = encoder.forward_vec(feature, Mode::Infer)?;
    let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("encoder output".into()));
    }
    let e: Vec<f64> = y.iter().map(|v| v / norm).collect();
    let inner: f64 = d_embedding.iter().zip(&e).map(|(g, v)| g * v).sum();
    let dy: Vec<f64> = d_embedding
        .iter()
        .zip(&e)
        .map(|(g, v)| (g - inner * v) / norm)
        .collect();
    let grads = encoder.backward_vec(&cache, &dy)?;
    acc.add_scaled(&grads, scale);
    Ok(())
}

fn new_encoder(config: &EncoderConfig, feature_dim: usize, rng: &mut ChaCha8Rng) -> Result<DenseNet> {
    DenseNet::new(
        vec![
            Layer::random(
                feature_dim,
                config.hidden_dim,
                Activation::LeakyRelu {
                    slope: config.leaky_slope,
                },
                rng,
            ),
            Layer::random(config.hidden_dim, config.embedding_dim, Activation::Identity, rng),
        ],
        0.0,
    )
}

/// Train a toy embedder on a synthetic corpus and report its quality on
/// held-out utterances.
pub fn train_toy_embedder(
    objective: Objective,
    corpus_config: &CorpusConfig,
    encoder_config: &EncoderConfig,
    seed: u64,
) -> Result<EmbedderOutcome> {
    corpus_config.validate()?;
    if encoder_config.batch_speakers < 2
        || encoder_config.batch_speakers > corpus_config.n_speakers
        || encoder_config.batch_utterances < 2
        || encoder_config.batch_utterances > corpus_config.utterances_per_speaker
    {
        return Err(Error::InvalidConfig(
            "batch sizes must be >= 2 and fit inside the corpus".into(),
        ));
    }
    if encoder_config.embedding_dim < 2 {
        return Err(Error::InvalidConfig("embedding_dim must be >= 2".into()));
    }
    let corpus = generate_corpus(corpus_config, derive_seed(seed, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut encoder = new_encoder(encoder_config, corpus_config.feature_dim, &mut rng)?;
    let mut optimizer = AdamState::new(&encoder);
    let adam = AdamParams {
        learning_rate: encoder_config.learning_rate,
        ..AdamParams::default()
    };

    let mut ge2e_params = Ge2eParams::default();
    let mut scale_m = [0.0f64; 2];
    let mut scale_v = [0.0f64; 2];

    // Pairwise head: [e_a, e_b, |e_a - e_b|] -> logit.
    let mut head = DenseNet::new(
        vec![
            Layer::random(
                3 * encoder_config.embedding_dim,
                encoder_config.hidden_dim,
                Activation::LeakyRelu { slope: 0.01 },
                &mut rng,
            ),
            Layer::random(encoder_config.hidden_dim, 1, Activation::Identity, &mut rng),
        ],
        0.0,
    )?;
    let mut head_optimizer = AdamState::new(&head);

    let (n, m) = (
        encoder_config.batch_speakers,
        encoder_config.batch_utterances,
    );
    for step in 0..encoder_config.steps {
        let mut step_rng = ChaCha8Rng::seed_from_u64(derive_seed2_step(seed, step as u64));
        let mut speakers: Vec<usize> = (0..corpus_config.n_speakers).collect();
        speakers.shuffle(&mut step_rng);
        speakers.truncate(n);
        let mut batch_features: Vec<&[f64]> = Vec::with_capacity(n * m);
        for &s in &speakers {
            let mut utts: Vec<usize> = (0..corpus_config.utterances_per_speaker).collect();
            utts.shuffle(&mut step_rng);
            for &u in utts.iter().take(m) {
                batch_features.push(&corpus.train[s][u]);
            }
        }

        match objective {
            Objective::Ge2e => {
                let embeddings: Vec<Vec<f64>> = batch_features
                    .iter()
                    .map(|f| embed(&encoder, f))
                    .collect::<Result<_>>()?;
                let grads = ge2e_loss_grads(&embeddings, n, m, &ge2e_params)?;
                let scale = 1.0 / (n * m) as f64;
                let mut acc = Gradients::zeros_like(&encoder);
                for (feature, d_emb) in batch_features.iter().zip(&grads.d_embeddings) {
                    accumulate_encoder_grads(&encoder, feature, d_emb, scale, &mut acc)?;
                }
                adam_step(&mut encoder, &acc, &mut optimizer, &adam)?;
                let mut wb = [ge2e_params.w, ge2e_params.b];
                adam_update(
                    &mut wb,
                    &[grads.d_w * scale, grads.d_b * scale],
                    &mut scale_m,
                    &mut scale_v,
                    optimizer.step,
                    &adam,
                    "ge2e.scale",
                )?;
                ge2e_params = Ge2eParams { w: wb[0], b: wb[1] };
                ge2e_params.clamp_w();
            }
            Objective::PairwiseBce => {
                // Balanced same/different pairs drawn from the batch.
                let n_pairs = n * m;
                let mut acc = Gradients::zeros_like(&encoder);
                let mut head_acc = Gradients::zeros_like(&head);
                let scale = 1.0 / n_pairs as f64;
                for p in 0..n_pairs {
                    use rand::Rng;
                    let same = p % 2 == 0;
                    let (fa, fb, label) = if same {
                        let s = speakers[step_rng.random_range(0..speakers.len())];
                        let u1 = step_rng.random_range(0..corpus_config.utterances_per_speaker);
                        let mut u2 = step_rng.random_range(0..corpus_config.utterances_per_speaker);
                        while u2 == u1 {
                            u2 = step_rng.random_range(0..corpus_config.utterances_per_speaker);
                        }
                        (&corpus.train[s][u1], &corpus.train[s][u2], true)
                    } else {
                        let s1 = speakers[step_rng.random_range(0..speakers.len())];
                        let mut s2 = speakers[step_rng.random_range(0..speakers.len())];
                        while s2 == s1 {
                            s2 = speakers[step_rng.random_range(0..speakers.len())];
                        }
                        let u1 = step_rng.random_range(0..corpus_config.utterances_per_speaker);
                        let u2 = step_rng.random_range(0..corpus_config.utterances_per_speaker);
                        (&corpus.train[s1][u1], &corpus.train[s2][u2], false)
                    };
                    let ea = embed(&encoder, fa)?;
                    let eb = embed(&encoder, fb)?;
                    let (_, head_grads, da, db) = pairwise_bce_loss_grads(&ea, &eb, label, &head)?;
                    head_acc.add_scaled(&head_grads, scale);
                    accumulate_encoder_grads(&encoder, fa, &da, scale, &mut acc)?;
                    accumulate_encoder_grads(&encoder, fb, &db, scale, &mut acc)?;
                }
                adam_step(&mut encoder, &acc, &mut optimizer, &adam)?;
                adam_step(&mut head, &head_acc, &mut head_optimizer, &adam)?;
            }
        }
    }

    // Held-out embeddings and quality.
    let eval_embeddings: Vec<Vec<Vec<f64>>> = corpus
        .eval
        .iter()
        .map(|speaker| speaker.iter().map(|f| embed(&encoder, f)).collect())
        .collect::<Result<_>>()?;
    let quality = quality_report(objective, &eval_embeddings)?;

    let mut embeddings = Vec::new();
    let mut speaker_of = BTreeMap::new();
    for (j, speaker) in eval_embeddings.iter().enumerate() {
        for (i, e) in speaker.iter().enumerate() {
            let id = format!("spk{j:03}-utt{i:02}");
            speaker_of.insert(id.clone(), format!("spk{j:03}"));
            embeddings.push(SpeakerEmbedding {
                id,
                vector: e.clone(),
            });
        }
    }
    Ok(EmbedderOutcome {
        encoder,
        ge2e_params: (objective == Objective::Ge2e).then_some(ge2e_params),
        quality,
        embeddings,
        speaker_of,
    })
}

fn derive_seed2_step(seed: u64, step: u64) -> u64 {
    crate::seed::derive_seed2(seed, 2, step)
}
