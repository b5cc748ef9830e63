//! Statistics over listener score distributions.
//!
//! Conventions fixed here: the per-example standard deviation is the
//! population one (divide by N), and correlation on degenerate
//! (zero-variance) input is an error rather than 0 or NaN.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EvaluationDataset, EvaluationExample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Arithmetic mean with an all-equal fast path.
///
/// The fast path keeps group means of identical scores bit-exact, which is
/// what makes the split-half upper bound return exactly 1.0 on zero-noise
/// data.
pub fn mean(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return first;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-example random variable of listener scores with its mean and
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub example_id: String,
    pub raw: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl ScoreDistribution {
    pub fn from_scores(example_id: impl Into<String>, raw: Vec<f64>) -> Result<Self> {
        let example_id = example_id.into();
        if raw.is_empty() {
            return Err(Error::EmptyScores { example_id });
        }
        let mean = mean(&raw);
        let var = raw.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / raw.len() as f64;
        Ok(Self {
            example_id,
            raw,
            mean,
            sd: var.sqrt(),
        })
    }

    pub fn from_example(example: &EvaluationExample) -> Result<Self> {
        Self::from_scores(
            example.example_id.clone(),
            example.scores.iter().map(|s| s.score).collect(),
        )
    }
}

/// Compute every example's score distribution, keyed by example id.
pub fn distributions_of(dataset: &EvaluationDataset) -> Result<BTreeMap<String, ScoreDistribution>> {
    dataset
        .examples()
        .iter()
        .map(|ex| Ok((ex.example_id.clone(), ScoreDistribution::from_example(ex)?)))
        .collect()
}

/// Product-moment correlation of two equal-length vectors.
///
/// Errors on length mismatch, fewer than two points, or zero variance in
/// either argument. The result is clamped to [-1, 1] against rounding.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
            context: "pearson".into(),
        });
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("pearson needs at least 2 points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Root mean squared error between predictions and targets.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: target.len(),
            context: "rmse".into(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("rmse".into()));
    }
    let mse = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Fraction of predictions within one standard deviation of the per-example
/// mean. The boundary counts as correct; examples with sd = 0 are correct
/// only when prediction and mean are exactly equal.
pub fn accuracy_within_sigma(
    preds: &BTreeMap<String, f64>,
    dists: &BTreeMap<String, ScoreDistribution>,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("accuracy_within_sigma".into()));
    }
    let mut correct = 0usize;
    for (id, pred) in preds {
        let dist = dists
            .get(id)
            .ok_or_else(|| Error::MissingDistribution(id.clone()))?;
        if (pred - dist.mean).abs() <= dist.sd {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Histogram-density weights: weight_i = C / (count(bin of mean_i) + epsilon)
/// with C chosen so the output's arithmetic mean is 1.
///
/// Bins are [0, bin_width), [bin_width, 2*bin_width), ... over [0, 100];
/// a mean of exactly 100 falls into the last bin.
pub fn density_weights(means: &[f64], bin_width: f64, epsilon: f64) -> Result<Vec<f64>> {
    if means.is_empty() {
        return Err(Error::EmptyInput("density_weights".into()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidConfig("bin_width must be > 0".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
    }
    let n_bins = (100.0 / bin_width).ceil() as usize;
    let bin_of = |m: f64| -> Result<usize> {
        if !(0.0..=100.0).contains(&m) {
            return Err(Error::ScoreOutOfRange {
                path: String::new(),
                line: 0,
                score: m,
            });
        }
        Ok(((m / bin_width) as usize).min(n_bins - 1))
    };
    let mut counts = vec![0usize; n_bins];
    for &m in means {
        counts[bin_of(m)?] += 1;
    }
    let raw: Vec<f64> = means
        .iter()
        .map(|&m| Ok(1.0 / (counts[bin_of(m)?] as f64 + epsilon)))
        .collect::<Result<_>>()?;
    // Summing in sorted order makes the normalizer, and hence the output,
    // exactly permutation-equivariant.
    let mut sorted = raw.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let mean_raw = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(raw.iter().map(|w| w / mean_raw).collect())
}

/// Histogram counts over half-open bins `[e_i, e_{i+1})`, plus separate
/// under/overflow counts for values outside the edge range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramCounts {
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

pub fn histogram(values: &[f64], bin_edges: &[f64]) -> Result<HistogramCounts> {
    if bin_edges.len() < 2
        || bin_edges.iter().any(|e| e.is_nan())
        || bin_edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidBinEdges);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let mut out = HistogramCounts {
        counts: vec![0; bin_edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < bin_edges[0] {
            out.underflow += 1;
        } else if v >= *bin_edges.last().expect("non-empty edges") {
            out.overflow += 1;
        } else {
            // First edge strictly greater than v closes the bin.
            let upper = bin_edges.partition_point(|e| *e <= v);
            out.counts[upper - 1] += 1;
        }
    }
    Ok(out)
}

/// The metric block reported for regression runs and the listener upper
/// bound. Key names are part of the JSON interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pearson: f64,
    pub avg_pearson_mean: f64,
    pub avg_pearson_sd: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricReport {
    /// Report for a single prediction set; the fold-averaged fields collapse
    /// onto the single Pearson value.
    pub fn single(pearson: f64, accuracy: f64, rmse: f64, n: usize) -> Self {
        Self {
            pearson,
            avg_pearson_mean: pearson,
            avg_pearson_sd: 0.0,
            accuracy,
            rmse,
            n,
        }
    }
}

/// Listener-agreement upper bound over split-half trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundReport {
    pub pearson_mean: f64,
    pub pearson_sd: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub n_trials: usize,
}

/// One split-half trial: every example's listeners are shuffled and split
/// into two halves (group A gets the extra listener when odd); group-A means
/// act as predictions against group-B score distributions.
pub fn split_half_trial(dataset: &EvaluationDataset, trial_seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut means_a = Vec::with_capacity(dataset.examples().len());
    let mut means_b = Vec::with_capacity(dataset.examples().len());
    let mut preds = BTreeMap::new();
    let mut dists_b = BTreeMap::new();
    for ex in dataset.examples() {
        if ex.scores.len() < 2 {
            return Err(Error::EmptyInput(format!(
                "example {} needs at least 2 scores for a split",
                ex.example_id
            )));
        }
        let mut scores: Vec<f64> = ex.scores.iter().map(|s| s.score).collect();
        scores.shuffle(&mut rng);
        let split = scores.len().div_ceil(2);
        let mean_a = mean(&scores[..split]);
        let dist_b = ScoreDistribution::from_scores(ex.example_id.clone(), scores[split..].to_vec())?;
        means_a.push(mean_a);
        means_b.push(dist_b.mean);
        preds.insert(ex.example_id.clone(), mean_a);
        dists_b.insert(ex.example_id.clone(), dist_b);
    }
    let r = pearson(&means_a, &means_b)?;
    let acc = accuracy_within_sigma(&preds, &dists_b)?;
    let err = rmse(&means_a, &means_b)?;
    Ok((r, acc, err))
}

/// Split-half listener agreement averaged over `n_trials` seeded trials.
///
/// Trial `i` uses the derived seed `derive_seed(rng_seed, i)`, so individual
/// trials are reproducible independently of the trial count.
pub fn listener_split_upper_bound(
    dataset: &EvaluationDataset,
    n_trials: usize,
    rng_seed: u64,
) -> Result<UpperBoundReport> {
    if n_trials < 1 {
        return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
    }
    let mut pearsons = Vec::with_capacity(n_trials);
    let mut accuracies = Vec::with_capacity(n_trials);
    let mut rmses = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let (r, acc, err) = split_half_trial(dataset, derive_seed(rng_seed, trial as u64))?;
        pearsons.push(r);
        accuracies.push(acc);
        rmses.push(err);
    }
    let pearson_mean = mean(&pearsons);
    let var = pearsons
        .iter()
        .map(|r| (r - pearson_mean) * (r - pearson_mean))
        .sum::<f64>()
        / pearsons.len() as f64;
    Ok(UpperBoundReport {
        pearson_mean,
        pearson_sd: var.sqrt(),
        accuracy: mean(&accuracies),
        rmse: mean(&rmses),
        n_trials,
    })
}
