//! Synthetic evaluation-world generator.
//!
//! Stands in for a real evaluation corpus: a latent speaker geometry fixes a
//! true similarity score per example and a listener model adds per-listener
//! bias and per-score noise on top. The pre-noise latent score is returned
//! alongside the dataset so oracle tests can check the pipeline end to end.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EvaluationDataset, EvaluationExample, ListenerScore, SpeakerEmbedding};

/// Spread of utterance embeddings around their speaker anchor, before
/// re-normalization onto the unit sphere.
const WITHIN_SPEAKER_JITTER: f64 = 0.05;

/// Monotone map from embedding distance to the latent true score in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimilarityCurve {
    /// score = 100 * exp(-d^2 / (2 * scale^2))
    Gaussian { scale: f64 },
    /// score = 100 * max(0, 1 - d / max_distance)
    Linear { max_distance: f64 },
}

impl SimilarityCurve {
    pub fn score(&self, distance: f64) -> f64 {
        match *self {
            SimilarityCurve::Gaussian { scale } => {
                100.0 * (-(distance * distance) / (2.0 * scale * scale)).exp()
            }
            SimilarityCurve::Linear { max_distance } => {
                100.0 * (1.0 - distance / max_distance).max(0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SimilarityCurve::Gaussian { scale } => scale > 0.0 && scale.is_finite(),
            SimilarityCurve::Linear { max_distance } => {
                max_distance > 0.0 && max_distance.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("similarity curve scale must be positive".into()))
        }
    }
}

impl Default for SimilarityCurve {
    fn default() -> Self {
        SimilarityCurve::Gaussian { scale: 0.45 }
    }
}

/// Latent speaker geometry plus listener noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub n_speakers: usize,
    pub n_systems: usize,
    pub n_examples: usize,
    pub n_listeners: usize,
    pub embedding_dim: usize,
    /// How far system embeddings drift from target-speaker anchors.
    pub leakage_strength: f64,
    /// Per-listener additive bias, score units.
    pub listener_bias_sd: f64,
    /// Per-score noise, score units.
    pub listener_noise_sd: f64,
    /// When set, per-example noise sd is drawn uniformly from
    /// [listener_noise_sd, listener_noise_sd_max] (heteroscedastic panels).
    pub listener_noise_sd_max: Option<f64>,
    pub similarity_curve: SimilarityCurve,
    pub rng_seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            n_systems: 20,
            n_examples: 500,
            n_listeners: 20,
            embedding_dim: 16,
            leakage_strength: 1.0,
            listener_bias_sd: 5.0,
            listener_noise_sd: 15.0,
            listener_noise_sd_max: None,
            similarity_curve: SimilarityCurve::default(),
            rng_seed: 42,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_speakers", self.n_speakers),
            ("n_systems", self.n_systems),
            ("n_examples", self.n_examples),
            ("n_listeners", self.n_listeners),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 2".into()));
        }
        for (name, value) in [
            ("leakage_strength", self.leakage_strength),
            ("listener_bias_sd", self.listener_bias_sd),
            ("listener_noise_sd", self.listener_noise_sd),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if let Some(max) = self.listener_noise_sd_max {
            if !(max.is_finite() && max >= self.listener_noise_sd) {
                return Err(Error::InvalidConfig(
                    "listener_noise_sd_max must be >= listener_noise_sd".into(),
                ));
            }
        }
        self.similarity_curve.validate()
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn sample_noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("valid sd").sample(rng)
    } else {
        0.0
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Generate a synthetic dataset plus its latent truth table
/// (example id -> pre-noise latent score).
///
/// Listener scores follow
/// `clip(similarity_curve(distance) + bias_listener + noise, 0, 100)`.
/// The whole construction is a pure function of the config, seed included.
pub fn generate_synthetic(
    config: &SyntheticWorldConfig,
) -> Result<(EvaluationDataset, IndexMap<String, f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let dim = config.embedding_dim;

    let anchors: Vec<Vec<f64>> = (0..config.n_speakers)
        .map(|_| normalize(gaussian_vector(&mut rng, dim)))
        .collect();
    // Each system drifts in a fixed direction with a fixed severity; systems
    // therefore differ in how strongly they leak away from the target voice.
    let system_drifts: Vec<(Vec<f64>, f64)> = (0..config.n_systems)
        .map(|_| {
            let dir = normalize(gaussian_vector(&mut rng, dim));
            let severity: f64 = rng.random_range(0.0..1.0);
            (dir, severity)
        })
        .collect();
    let biases: Vec<f64> = (0..config.n_listeners)
        .map(|_| sample_noise(&mut rng, config.listener_bias_sd))
        .collect();

    let mut embeddings = Vec::with_capacity(config.n_examples * 2);
    let mut examples = Vec::with_capacity(config.n_examples);
    let mut truth = IndexMap::with_capacity(config.n_examples);

    for e in 0..config.n_examples {
        let speaker = rng.random_range(0..config.n_speakers);
        let system = rng.random_range(0..config.n_systems);
        let anchor = &anchors[speaker];
        let (drift_dir, severity) = &system_drifts[system];

        let mut reference = gaussian_vector(&mut rng, dim);
        for (r, a) in reference.iter_mut().zip(anchor) {
            *r = a + WITHIN_SPEAKER_JITTER * *r;
        }
        let reference = normalize(reference);

        let drift = config.leakage_strength * severity;
        let mut source = gaussian_vector(&mut rng, dim);
        for ((s, a), d) in source.iter_mut().zip(anchor).zip(drift_dir) {
            *s = a + drift * d + WITHIN_SPEAKER_JITTER * *s;
        }
        let source = normalize(source);

        let latent = config
            .similarity_curve
            .score(euclidean(&source, &reference));
        let noise_sd = match config.listener_noise_sd_max {
            Some(max) if max > config.listener_noise_sd => {
                rng.random_range(config.listener_noise_sd..=max)
            }
            _ => config.listener_noise_sd,
        };

        let example_id = format!("ex{e:05}");
        let source_id = format!("{example_id}-src");
        let reference_id = format!("{example_id}-ref");
        let scores = biases
            .iter()
            .enumerate()
            .map(|(l, bias)| ListenerScore {
                listener_id: format!("lst{l:03}"),
                score: (latent + bias + sample_noise(&mut rng, noise_sd)).clamp(0.0, 100.0),
            })
            .collect();

        embeddings.push(SpeakerEmbedding {
            id: source_id.clone(),
            vector: source,
        });
        embeddings.push(SpeakerEmbedding {
            id: reference_id.clone(),
            vector: reference,
        });
        examples.push(EvaluationExample {
            example_id: example_id.clone(),
            cycle_id: format!("cyc{speaker:03}"),
            system_id: format!("sys{system:03}"),
            target_speaker_id: format!("spk{speaker:03}"),
            source_embedding_id: source_id,
            reference_embedding_id: reference_id,
            scores,
        });
        truth.insert(example_id, latent);
    }

    let dataset = EvaluationDataset::new(embeddings, examples)?;
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise_config() -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            listener_bias_sd: 0.0,
            listener_noise_sd: 0.0,
            n_examples: 50,
            n_listeners: 5,
            ..SyntheticWorldConfig::default()
        }
    }

    #[test]
    fn zero_noise_scores_equal_latent_exactly() {
        let (ds, truth) = generate_synthetic(&zero_noise_config()).unwrap();
        for ex in ds.examples() {
            let latent = truth[&ex.example_id];
            for s in &ex.scores {
                assert_eq!(s.score, latent);
            }
        }
    }

    #[test]
    fn score_count_matches_config() {
        let cfg = SyntheticWorldConfig {
            n_examples: 100,
            n_listeners: 20,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.examples().len(), 100);
        let total: usize = ds.examples().iter().map(|e| e.scores.len()).sum();
        assert_eq!(total, 2000);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticWorldConfig::default();
        let (a, ta) = generate_synthetic(&cfg).unwrap();
        let (b, tb) = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn different_seed_changes_dataset() {
        let cfg = SyntheticWorldConfig::default();
        let other = SyntheticWorldConfig {
            rng_seed: 43,
            ..cfg.clone()
        };
        let (a, _) = generate_synthetic(&cfg).unwrap();
        let (b, _) = generate_synthetic(&other).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SyntheticWorldConfig {
            n_examples: 0,
            ..SyntheticWorldConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn scores_stay_in_range_under_heavy_noise() {
        let cfg = SyntheticWorldConfig {
            listener_noise_sd: 60.0,
            listener_bias_sd: 30.0,
            n_examples: 50,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        for ex in ds.examples() {
            for s in &ex.scores {
                assert!((0.0..=100.0).contains(&s.score));
            }
        }
    }

    /// Per-example sample sd under noise_sd=15 matches a direct Monte-Carlo
    /// simulation of the same clipped-noise listener model.
    #[test]
    fn per_example_sd_matches_noise_model() {
        let cfg = SyntheticWorldConfig {
            listener_bias_sd: 0.0,
            listener_noise_sd: 15.0,
            n_examples: 400,
            n_listeners: 20,
            ..SyntheticWorldConfig::default()
        };
        let (ds, truth) = generate_synthetic(&cfg).unwrap();

        // Mid-range latents keep the clip inactive in practice.
        let mid: Vec<&EvaluationExample> = ds
            .examples()
            .iter()
            .filter(|e| (30.0..=70.0).contains(&truth[&e.example_id]))
            .collect();
        assert!(mid.len() > 50, "need enough mid-range examples");
        let observed: f64 = mid
            .iter()
            .map(|e| crate::stats::ScoreDistribution::from_example(e).unwrap().sd)
            .sum::<f64>()
            / mid.len() as f64;

        // Independent oracle: population sd of 20 draws of clip(50 + N(0,15)).
        let mut rng = ChaCha8Rng::seed_from_u64(987);
        let normal = Normal::new(0.0, 15.0).unwrap();
        let reps = 4000;
        let mut sds = Vec::with_capacity(reps);
        for _ in 0..reps {
            let draws: Vec<f64> = (0..20)
                .map(|_| (50.0f64 + normal.sample(&mut rng)).clamp(0.0, 100.0))
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                / draws.len() as f64;
            sds.push(var.sqrt());
        }
        let oracle_mean = sds.iter().sum::<f64>() / reps as f64;
        let oracle_sd = (sds.iter().map(|s| (s - oracle_mean) * (s - oracle_mean)).sum::<f64>()
            / reps as f64)
            .sqrt();
        let se = oracle_sd / (mid.len() as f64).sqrt();
        assert!(
            (observed - oracle_mean).abs() < 3.0 * se + 0.2,
            "observed mean sd {observed} vs oracle {oracle_mean} (se {se})"
        );
    }
}
