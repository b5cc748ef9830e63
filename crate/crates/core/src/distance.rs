//! Distance metrics between speaker embeddings and the distance-vs-score
//! baseline correlation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EvaluationDataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Cosine,
}

impl DistanceMetric {
    pub const VALID: &'static str = "euclidean, cosine";

    pub fn compute(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            DistanceMetric::Euclidean => euclidean(a, b),
            DistanceMetric::Cosine => cosine_distance(a, b),
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceMetric::Euclidean => write!(f, "euclidean"),
            DistanceMetric::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::UnknownMetric {
                got: other.to_string(),
                valid: Self::VALID.to_string(),
            }),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64], context: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
            context: context.to_string(),
        });
    }
    Ok(())
}

/// L2 norm of the difference vector.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b, "euclidean")?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// 1 - cos(a, b); range [0, 2]. Zero-norm inputs are rejected as corrupt.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b, "cosine")?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(Error::ZeroNorm("cosine distance".into()));
    }
    // Single sqrt of the product keeps d(a, a) exactly 0.
    Ok((1.0 - dot / (na2 * nb2).sqrt()).clamp(0.0, 2.0))
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm("normalize".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Per-example distances between source and reference embeddings, in
/// example order.
pub fn example_distances(
    dataset: &EvaluationDataset,
    metric: DistanceMetric,
    normalize_first: bool,
) -> Result<Vec<f64>> {
    dataset
        .examples()
        .iter()
        .map(|ex| {
            let (src, rf) = dataset.example_vectors(ex)?;
            if normalize_first {
                metric.compute(&normalized(src)?, &normalized(rf)?)
            } else {
                metric.compute(src, rf)
            }
        })
        .collect()
}

/// Pearson correlation between per-example embedding distances and mean
/// scores. The sign is preserved: good embeddings give strongly negative
/// values.
pub fn baseline_correlation(dataset: &EvaluationDataset, metric: DistanceMetric) -> Result<f64> {
    baseline_correlation_with_options(dataset, metric, false)
}

/// Baseline correlation with an optional length-normalization of embeddings
/// before the distance computation.
pub fn baseline_correlation_with_options(
    dataset: &EvaluationDataset,
    metric: DistanceMetric,
    normalize_first: bool,
) -> Result<f64> {
    let distances = example_distances(dataset, metric, normalize_first)?;
    let means: Vec<f64> = dataset
        .examples()
        .iter()
        .map(|ex| Ok(stats::ScoreDistribution::from_example(ex)?.mean))
        .collect::<Result<_>>()?;
    stats::pearson(&distances, &means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticWorldConfig};

    #[test]
    fn euclidean_cases() {
        assert_eq!(euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            euclidean(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn euclidean_matches_extended_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let a: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
            // compensated-summation oracle
            let mut sum = 0.0;
            let mut c = 0.0;
            for (x, y) in a.iter().zip(&b) {
                let v = (x - y) * (x - y) - c;
                let t = sum + v;
                c = (t - sum) - v;
                sum = t;
            }
            let want = sum.sqrt();
            let got = euclidean(&a, &b).unwrap();
            assert!((got - want).abs() <= 1e-10 * want.max(1.0));
        }
    }

    #[test]
    fn metric_flag_parsing() {
        assert_eq!(
            "euclidean".parse::<DistanceMetric>().unwrap(),
            DistanceMetric::Euclidean
        );
        assert_eq!(
            "cosine".parse::<DistanceMetric>().unwrap(),
            DistanceMetric::Cosine
        );
        match "manhattan".parse::<DistanceMetric>() {
            Err(Error::UnknownMetric { got, valid }) => {
                assert_eq!(got, "manhattan");
                assert!(valid.contains("euclidean") && valid.contains("cosine"));
            }
            other => panic!("expected UnknownMetric, got {other:?}"),
        }
    }

    #[test]
    fn zero_noise_baseline_is_strongly_negative() {
        let cfg = SyntheticWorldConfig {
            listener_bias_sd: 0.0,
            listener_noise_sd: 0.0,
            n_examples: 400,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let cos = baseline_correlation(&ds, DistanceMetric::Cosine).unwrap();
        let euc = baseline_correlation(&ds, DistanceMetric::Euclidean).unwrap();
        assert!(cos <= -0.95, "cosine correlation {cos}");
        assert!(euc <= -0.95, "euclidean correlation {euc}");
    }

    #[test]
    fn constant_mean_scores_are_degenerate() {
        use crate::data::{EvaluationDataset, EvaluationExample, ListenerScore, SpeakerEmbedding};
        let score = |l: &str, s: f64| ListenerScore {
            listener_id: l.into(),
            score: s,
        };
        let ex = |id: &str, src: &str, rf: &str| EvaluationExample {
            example_id: id.into(),
            cycle_id: "c".into(),
            system_id: "s".into(),
            target_speaker_id: "t".into(),
            source_embedding_id: src.into(),
            reference_embedding_id: rf.into(),
            scores: vec![score("l0", 50.0)],
        };
        let ds = EvaluationDataset::new(
            vec![
                SpeakerEmbedding::new("a", vec![1.0, 0.0]).unwrap(),
                SpeakerEmbedding::new("b", vec![0.0, 1.0]).unwrap(),
                SpeakerEmbedding::new("c", vec![1.0, 1.0]).unwrap(),
            ],
            vec![ex("e0", "a", "b"), ex("e1", "a", "c")],
        )
        .unwrap();
        assert!(matches!(
            baseline_correlation(&ds, DistanceMetric::Cosine),
            Err(Error::ZeroVariance(_))
        ));
    }

    /// On the unit sphere Euclidean and cosine distances are monotonically
    /// related, so their rank order over examples is identical.
    #[test]
    fn unit_sphere_metrics_agree_in_rank_order() {
        let cfg = SyntheticWorldConfig {
            n_examples: 200,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let de = example_distances(&ds, DistanceMetric::Euclidean, true).unwrap();
        let dc = example_distances(&ds, DistanceMetric::Cosine, true).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut r = vec![0usize; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos;
            }
            r
        };
        assert_eq!(rank(&de), rank(&dc));
        // d_e = sqrt(2 * d_cos) holds pointwise on the unit sphere
        for (e, c) in de.iter().zip(&dc) {
            assert!((e - (2.0 * c).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn baseline_is_permutation_invariant() {
        let cfg = SyntheticWorldConfig {
            n_examples: 60,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let want = baseline_correlation(&ds, DistanceMetric::Cosine).unwrap();
        let mut embeddings: Vec<_> = ds.embeddings().values().cloned().collect();
        embeddings.reverse();
        let mut examples = ds.examples().to_vec();
        examples.reverse();
        let permuted = EvaluationDataset::new(embeddings, examples).unwrap();
        let got = baseline_correlation(&permuted, DistanceMetric::Cosine).unwrap();
        assert!((want - got).abs() < 1e-12);
    }
}
