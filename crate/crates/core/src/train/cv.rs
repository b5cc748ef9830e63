//! k-fold cross-validation driver, at the utterance and sub-utterance level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EvaluationDataset;
use crate::error::{Error, Result};
use crate::nn::loss::LossSpec;
use crate::seed::derive_seed;
use crate::stats::{self, MetricReport, ScoreDistribution};

use super::{
    build_unit, predict_units, train_units, NetConfig, Prediction, TrainConfig, TrainUnit,
};

/// Fold assignment granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Examples are distributed over folds individually.
    ByExample,
    /// All examples of one system share a fold.
    BySystem,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::ByExample => write!(f, "by-example"),
            Grouping::BySystem => write!(f, "by-system"),
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "by-example" => Ok(Grouping::ByExample),
            "by-system" => Ok(Grouping::BySystem),
            other => Err(Error::InvalidConfig(format!(
                "unknown grouping {other:?}; valid values: by-example, by-system"
            ))),
        }
    }
}

/// Deterministic fold assignment over a dataset's examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_folds: usize,
    pub grouping: Grouping,
    pub rng_seed: u64,
    /// example id -> fold index
    pub assignment: BTreeMap<String, usize>,
}

impl CvPlan {
    pub fn new(
        dataset: &EvaluationDataset,
        n_folds: usize,
        grouping: Grouping,
        rng_seed: u64,
    ) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::InvalidPlan("n_folds must be >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut assignment = BTreeMap::new();
        match grouping {
            Grouping::ByExample => {
                if dataset.examples().len() < n_folds {
                    return Err(Error::InvalidPlan(format!(
                        "{} examples cannot fill {n_folds} folds",
                        dataset.examples().len()
                    )));
                }
                let mut ids: Vec<&str> = dataset
                    .examples()
                    .iter()
                    .map(|e| e.example_id.as_str())
                    .collect();
                ids.shuffle(&mut rng);
                for (i, id) in ids.into_iter().enumerate() {
                    assignment.insert(id.to_string(), i % n_folds);
                }
            }
            Grouping::BySystem => {
                let mut systems = Vec::new();
                let mut seen = BTreeSet::new();
                for ex in dataset.examples() {
                    if seen.insert(ex.system_id.as_str()) {
                        systems.push(ex.system_id.as_str());
                    }
                }
                if systems.len() < n_folds {
                    return Err(Error::InvalidPlan(format!(
                        "{} systems cannot fill {n_folds} folds",
                        systems.len()
                    )));
                }
                systems.shuffle(&mut rng);
                let fold_of: BTreeMap<&str, usize> = systems
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (s, i % n_folds))
                    .collect();
                for ex in dataset.examples() {
                    assignment.insert(ex.example_id.clone(), fold_of[ex.system_id.as_str()]);
                }
            }
        }
        Ok(Self {
            n_folds,
            grouping,
            rng_seed,
            assignment,
        })
    }

    /// Check that the assignment is exactly a partition of the dataset.
    pub fn validate(&self, dataset: &EvaluationDataset) -> Result<()> {
        if dataset.examples().len() != self.assignment.len() {
            return Err(Error::InvalidPlan(format!(
                "plan covers {} examples, dataset has {}",
                self.assignment.len(),
                dataset.examples().len()
            )));
        }
        for ex in dataset.examples() {
            match self.assignment.get(&ex.example_id) {
                Some(&fold) if fold < self.n_folds => {}
                Some(&fold) => {
                    return Err(Error::InvalidPlan(format!(
                        "example {} assigned to fold {fold} out of {}",
                        ex.example_id, self.n_folds
                    )));
                }
                None => {
                    return Err(Error::InvalidPlan(format!(
                        "example {} has no fold assignment",
                        ex.example_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cross-validation outcome: per-fold and pooled metric reports plus all
/// out-of-fold predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub per_fold: Vec<MetricReport>,
    pub pooled: MetricReport,
    pub avg_pearson_mean: f64,
    pub avg_pearson_sd: f64,
    /// Folds whose own Pearson was undefined (flagged, never dropped from
    /// the pooled report).
    pub degenerate_folds: Vec<usize>,
    pub predictions: Vec<Prediction>,
}

struct FoldUnit {
    fold: usize,
    unit: TrainUnit,
}

/// Train/predict over every fold and assemble the pooled report.
fn run_folds(
    units: Vec<FoldUnit>,
    n_folds: usize,
    plan_seed: u64,
    loss_spec: &LossSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
) -> Result<CvResult> {
    let mut per_fold = Vec::with_capacity(n_folds);
    let mut degenerate_folds = Vec::new();
    let mut all_preds: Vec<Prediction> = Vec::with_capacity(units.len());
    let mut dists: BTreeMap<String, ScoreDistribution> = BTreeMap::new();
    for fu in &units {
        let mut dist = fu.unit.dist.clone();
        dist.example_id = fu.unit.id.clone();
        dists.insert(fu.unit.id.clone(), dist);
    }

    for fold in 0..n_folds {
        let train_set: Vec<TrainUnit> = units
            .iter()
            .filter(|fu| fu.fold != fold)
            .map(|fu| fu.unit.clone())
            .collect();
        let test_set: Vec<TrainUnit> = units
            .iter()
            .filter(|fu| fu.fold == fold)
            .map(|fu| fu.unit.clone())
            .collect();
        if train_set.is_empty() || test_set.is_empty() {
            return Err(Error::InvalidPlan(format!("fold {fold} is empty")));
        }
        let fold_seed = derive_seed(plan_seed, fold as u64);
        let mut degenerate = false;

        // A training failure demotes the fold to a mean predictor rather
        // than dropping its examples from the pooled report.
        let preds = match train_units(&train_set, loss_spec, net_config, train_config, fold_seed) {
            Ok(model) => predict_units(&model.net, &test_set)?,
            Err(Error::NonFiniteLoss { .. }) => {
                degenerate = true;
                let fallback = stats::mean(
                    &train_set.iter().map(|u| u.dist.mean).collect::<Vec<f64>>(),
                )
                .clamp(0.0, 100.0);
                test_set
                    .iter()
                    .map(|u| Prediction {
                        example_id: u.id.clone(),
                        value: fallback,
                    })
                    .collect()
            }
            Err(other) => return Err(other),
        };

        let pred_values: Vec<f64> = preds.iter().map(|p| p.value).collect();
        let target_means: Vec<f64> = test_set.iter().map(|u| u.dist.mean).collect();
        let pearson = match stats::pearson(&pred_values, &target_means) {
            Ok(r) => r,
            Err(Error::ZeroVariance(_)) => {
                degenerate = true;
                0.0
            }
            Err(other) => return Err(other),
        };
        let pred_map: BTreeMap<String, f64> = preds
            .iter()
            .map(|p| (p.example_id.clone(), p.value))
            .collect();
        let accuracy = stats::accuracy_within_sigma(&pred_map, &dists)?;
        let rmse = stats::rmse(&pred_values, &target_means)?;
        per_fold.push(MetricReport::single(pearson, accuracy, rmse, test_set.len()));
        if degenerate {
            degenerate_folds.push(fold);
        }
        all_preds.extend(preds);
    }

    all_preds.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let pred_values: Vec<f64> = all_preds.iter().map(|p| p.value).collect();
    let target_means: Vec<f64> = all_preds
        .iter()
        .map(|p| dists[&p.example_id].mean)
        .collect();
    let pooled_pearson = stats::pearson(&pred_values, &target_means)?;
    let pred_map: BTreeMap<String, f64> = all_preds
        .iter()
        .map(|p| (p.example_id.clone(), p.value))
        .collect();
    let pooled_accuracy = stats::accuracy_within_sigma(&pred_map, &dists)?;
    let pooled_rmse = stats::rmse(&pred_values, &target_means)?;

    // Fold-averaged Pearson over folds where it was defined.
    let fold_pearsons: Vec<f64> = per_fold
        .iter()
        .enumerate()
        .filter(|(i, _)| !degenerate_folds.contains(i))
        .map(|(_, r)| r.pearson)
        .collect();
    let (avg_mean, avg_sd) = if fold_pearsons.is_empty() {
        (0.0, 0.0)
    } else {
        let m = stats::mean(&fold_pearsons);
        let var = fold_pearsons.iter().map(|r| (r - m) * (r - m)).sum::<f64>()
            / fold_pearsons.len() as f64;
        (m, var.sqrt())
    };

    Ok(CvResult {
        per_fold,
        pooled: MetricReport {
            pearson: pooled_pearson,
            avg_pearson_mean: avg_mean,
            avg_pearson_sd: avg_sd,
            accuracy: pooled_accuracy,
            rmse: pooled_rmse,
            n: all_preds.len(),
        },
        avg_pearson_mean: avg_mean,
        avg_pearson_sd: avg_sd,
        degenerate_folds,
        predictions: all_preds,
    })
}

/// Utterance-level cross-validation: per fold, train on out-of-fold
/// examples and predict the fold's examples.
pub fn cross_validate(
    dataset: &EvaluationDataset,
    loss_spec: &LossSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
    plan: &CvPlan,
) -> Result<CvResult> {
    plan.validate(dataset)?;
    let units: Vec<FoldUnit> = dataset
        .examples()
        .iter()
        .map(|ex| {
            Ok(FoldUnit {
                fold: plan.assignment[&ex.example_id],
                unit: build_unit(dataset, &ex.example_id, net_config.features)?,
            })
        })
        .collect::<Result<_>>()?;
    run_folds(
        units,
        plan.n_folds,
        plan.rng_seed,
        loss_spec,
        net_config,
        train_config,
    )
}

/// Sub-utterance cross-validation: every piece pair is a unit inheriting
/// its parent's score distribution; all pieces of one example share the
/// parent's fold, and metrics are computed per piece.
pub fn evaluate_pieces(
    dataset: &EvaluationDataset,
    loss_spec: &LossSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
    plan: &CvPlan,
) -> Result<CvResult> {
    let pieces = dataset.pieces().ok_or(Error::PiecesMissing)?;
    let mut units = Vec::new();
    for ex in dataset.examples() {
        let Some(pairs) = pieces.get(&ex.example_id) else {
            continue;
        };
        let fold = *plan.assignment.get(&ex.example_id).ok_or_else(|| {
            Error::InvalidPlan(format!(
                "piece parent {} has no fold assignment",
                ex.example_id
            ))
        })?;
        if fold >= plan.n_folds {
            return Err(Error::InvalidPlan(format!(
                "piece parent {} assigned to fold {fold} out of {}",
                ex.example_id, plan.n_folds
            )));
        }
        let dist = ScoreDistribution::from_example(ex)?;
        for (index, pair) in pairs.iter().enumerate() {
            units.push(FoldUnit {
                fold,
                unit: TrainUnit {
                    id: format!("{}#p{index:02}", ex.example_id),
                    features: net_config
                        .features
                        .build(&pair.source.vector, &pair.reference.vector),
                    dist: dist.clone(),
                },
            });
        }
    }
    if units.is_empty() {
        return Err(Error::PiecesMissing);
    }
    run_folds(
        units,
        plan.n_folds,
        plan.rng_seed,
        loss_spec,
        net_config,
        train_config,
    )
}
