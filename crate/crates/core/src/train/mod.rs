//! Training loop, prediction and cross-validation for the score regressor.
//!
//! The regressor maps a feature vector built from the source and reference
//! embeddings to one score. Training is deterministic under its seed:
//! shuffles, init and dropout masks all derive from it, so identical inputs
//! produce bitwise-identical checkpoints.

mod checkpoint;
mod cv;

pub use checkpoint::{Checkpoint, TrainingSnapshot};
pub use cv::{cross_validate, evaluate_pieces, CvPlan, CvResult, Grouping};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EvaluationDataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, loss, loss::LossKind, loss::LossSpec, Activation, AdamParams, AdamState, DenseNet,
    Gradients, Layer, Mode,
};
use crate::seed::{derive_seed, derive_seed2};
use crate::stats::{self, ScoreDistribution};

/// How the two embeddings are combined into the regressor input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// [source, reference, |source - reference|]
    ConcatAbsDiff,
    /// [source, reference]
    Concat,
    /// [|source - reference|]
    AbsDiff,
}

impl FeatureMode {
    pub fn build(self, source: &[f64], reference: &[f64]) -> Vec<f64> {
        let absdiff = || source.iter().zip(reference).map(|(a, b)| (a - b).abs());
        match self {
            FeatureMode::ConcatAbsDiff => source
                .iter()
                .chain(reference)
                .copied()
                .chain(absdiff())
                .collect(),
            FeatureMode::Concat => source.iter().chain(reference).copied().collect(),
            FeatureMode::AbsDiff => absdiff().collect(),
        }
    }

    pub fn input_dim(self, embedding_dim: usize) -> usize {
        match self {
            FeatureMode::ConcatAbsDiff => 3 * embedding_dim,
            FeatureMode::Concat => 2 * embedding_dim,
            FeatureMode::AbsDiff => embedding_dim,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureMode::ConcatAbsDiff => "concat-absdiff",
            FeatureMode::Concat => "concat",
            FeatureMode::AbsDiff => "absdiff",
        };
        write!(f, "{s}")
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat-absdiff" => Ok(FeatureMode::ConcatAbsDiff),
            "concat" => Ok(FeatureMode::Concat),
            "absdiff" => Ok(FeatureMode::AbsDiff),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature mode {other:?}; valid values: concat-absdiff, concat, absdiff"
            ))),
        }
    }
}

/// Regressor architecture knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub features: FeatureMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            leaky_slope: 0.01,
            dropout_rate: 0.2,
            features: FeatureMode::ConcatAbsDiff,
        }
    }
}

/// Optimization schedule. A zero `val_fraction` disables early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 10,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training/prediction unit: a feature vector with its target score
/// distribution.
#[derive(Debug, Clone)]
pub struct TrainUnit {
    pub id: String,
    pub features: Vec<f64>,
    pub dist: ScoreDistribution,
}

/// A model prediction, clamped to [0, 100] at reporting time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// A trained regressor together with its training curve.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: DenseNet,
    pub features: FeatureMode,
    pub curve: Vec<CurvePoint>,
    pub optimizer_state: AdamState,
}

fn build_unit(dataset: &EvaluationDataset, id: &str, features: FeatureMode) -> Result<TrainUnit> {
    let ex = dataset.example(id)?;
    let (src, rf) = dataset.example_vectors(ex)?;
    Ok(TrainUnit {
        id: id.to_string(),
        features: features.build(src, rf),
        dist: ScoreDistribution::from_example(ex)?,
    })
}

/// Train a regressor on the given example ids.
///
/// Density weights (for the weighted-MSE loss) and the output-bias init are
/// computed from `train_ids` only.
pub fn train(
    dataset: &EvaluationDataset,
    train_ids: &[String],
    loss_spec: &LossSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let unique: BTreeSet<&String> = train_ids.iter().collect();
    let units: Vec<TrainUnit> = unique
        .into_iter()
        .map(|id| build_unit(dataset, id, net_config.features))
        .collect::<Result<_>>()?;
    train_units(&units, loss_spec, net_config, train_config, seed)
}

/// Row of the epoch iteration: one unit, or one (unit, listener score) pair
/// for the individual-score loss.
#[derive(Clone, Copy)]
struct Row {
    unit: usize,
    score: Option<usize>,
}

struct LossEval<'a> {
    spec: &'a LossSpec,
    weights: Vec<f64>,
}

impl LossEval<'_> {
    fn loss_and_grad(&self, pred: f64, row: Row, unit: &TrainUnit) -> Result<(f64, f64)> {
        let eps = self.spec.epsilon_sd;
        Ok(match self.spec.kind {
            LossKind::Mse => (
                loss::mse(pred, unit.dist.mean),
                loss::mse_grad(pred, unit.dist.mean),
            ),
            LossKind::WeightedMse => {
                let w = self.weights[row.unit];
                (
                    loss::weighted_mse(pred, unit.dist.mean, w),
                    loss::weighted_mse_grad(pred, unit.dist.mean, w),
                )
            }
            LossKind::Mahalanobis => (
                loss::mahalanobis(pred, &unit.dist, eps),
                loss::mahalanobis_grad(pred, &unit.dist, eps),
            ),
            LossKind::MahalanobisSingle => {
                let score = unit.dist.raw[row.score.expect("single-loss row has a score index")];
                (
                    loss::mahalanobis_single(pred, score, &unit.dist, eps)?,
                    loss::mahalanobis_single_grad(pred, score, &unit.dist, eps),
                )
            }
        })
    }
}

fn rows_for(units: &[TrainUnit], indices: &[usize], kind: LossKind) -> Vec<Row> {
    let mut rows = Vec::new();
    for &unit in indices {
        match kind {
            LossKind::MahalanobisSingle => {
                for score in 0..units[unit].dist.raw.len() {
                    rows.push(Row {
                        unit,
                        score: Some(score),
                    });
                }
            }
            _ => rows.push(Row { unit, score: None }),
        }
    }
    rows
}

/// Core training loop over pre-built units. Exposed to the cross-validation
/// driver; external callers go through [`train`].
pub(crate) fn train_units(
    units: &[TrainUnit],
    loss_spec: &LossSpec,
    net_config: &NetConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    loss_spec.validate()?;
    train_config.validate()?;
    if units.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let input_dim = units[0].features.len();

    // Density weights over the whole training set, for the weighted loss.
    let weights = if loss_spec.kind == LossKind::WeightedMse {
        let means: Vec<f64> = units.iter().map(|u| u.dist.mean).collect();
        stats::density_weights(&means, 5.0, 1.0)?
    } else {
        Vec::new()
    };
    let evaluator = LossEval {
        spec: loss_spec,
        weights,
    };

    // Held-out validation split for early stopping.
    let mut indices: Vec<usize> = (0..units.len()).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));
    let val_n = (units.len() as f64 * train_config.val_fraction) as usize;
    let (val_idx, fit_idx) = indices.split_at(val_n);
    let mut fit_idx = fit_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    fit_idx.sort_unstable();
    val_idx.sort_unstable();

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut output = Layer::random(net_config.hidden_dim, 1, Activation::Identity, &mut init_rng);
    // Start at the mean training target; Adam then only fits residuals.
    output.biases[0] = stats::mean(&units.iter().map(|u| u.dist.mean).collect::<Vec<f64>>());
    let mut net = DenseNet::new(
        vec![
            Layer::random(
                input_dim,
                net_config.hidden_dim,
                Activation::LeakyRelu {
                    slope: net_config.leaky_slope,
                },
                &mut init_rng,
            ),
            output,
        ],
        net_config.dropout_rate,
    )?;

    let mut optimizer = AdamState::new(&net);
    let adam = AdamParams {
        learning_rate: train_config.learning_rate,
        ..AdamParams::default()
    };

    let fit_rows = rows_for(units, &fit_idx, loss_spec.kind);
    let val_rows = rows_for(units, &val_idx, loss_spec.kind);

    let mut curve = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, DenseNet, AdamState)> = None;
    let mut stale_epochs = 0usize;
    let mut dropout_counter = 0u64;

    for epoch in 0..train_config.epochs {
        let mut rows = fit_rows.clone();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed2(seed, 2, epoch as u64)));

        let mut epoch_loss = 0.0;
        for batch in rows.chunks(train_config.batch_size) {
            let mut batch_grads = Gradients::zeros_like(&net);
            let inv = 1.0 / batch.len() as f64;
            for &row in batch {
                let unit = &units[row.unit];
                let (pred, cache) = net.forward(
                    &unit.features,
                    Mode::Train {
                        dropout_seed: derive_seed2(seed, 3, dropout_counter),
                    },
                )?;
                dropout_counter += 1;
                let (loss_value, dloss) = evaluator.loss_and_grad(pred, row, unit)?;
                if !loss_value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        example_id: unit.id.clone(),
                    });
                }
                epoch_loss += loss_value;
                let grads = net.backward(&cache, dloss)?;
                batch_grads.add_scaled(&grads, inv);
            }
            adam_step(&mut net, &batch_grads, &mut optimizer, &adam)?;
        }
        let train_loss = epoch_loss / fit_rows.len() as f64;

        let val_loss = if val_rows.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for &row in &val_rows {
                let unit = &units[row.unit];
                let (pred, _) = net.forward(&unit.features, Mode::Infer)?;
                total += evaluator.loss_and_grad(pred, row, unit)?.0;
            }
            Some(total / val_rows.len() as f64)
        };
        curve.push(CurvePoint {
            epoch,
            train_loss,
            val_loss,
        });

        if let Some(v) = val_loss {
            let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
            if improved {
                best = Some((v, net.clone(), optimizer.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= train_config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, best_net, best_state)) = best {
        net = best_net;
        optimizer = best_state;
    }
    Ok(TrainedModel {
        net,
        features: net_config.features,
        curve,
        optimizer_state: optimizer,
    })
}

/// Inference-mode predictions for the given example ids, clamped to
/// [0, 100], in input order.
pub fn predict(
    net: &DenseNet,
    features: FeatureMode,
    dataset: &EvaluationDataset,
    ids: &[String],
) -> Result<Vec<Prediction>> {
    ids.iter()
        .map(|id| {
            let ex = dataset.example(id)?;
            let (src, rf) = dataset.example_vectors(ex)?;
            let (raw, _) = net.forward(&features.build(src, rf), Mode::Infer)?;
            Ok(Prediction {
                example_id: id.clone(),
                value: raw.clamp(0.0, 100.0),
            })
        })
        .collect()
}

pub(crate) fn predict_units(net: &DenseNet, units: &[TrainUnit]) -> Result<Vec<Prediction>> {
    units
        .iter()
        .map(|unit| {
            let (raw, _) = net.forward(&unit.features, Mode::Infer)?;
            Ok(Prediction {
                example_id: unit.id.clone(),
                value: raw.clamp(0.0, 100.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticWorldConfig};
    use crate::nn::loss::{LossKind, LossSpec};

    fn quick_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_example_is_memorized() {
        let cfg = SyntheticWorldConfig {
            n_examples: 1,
            n_listeners: 3,
            listener_bias_sd: 0.0,
            listener_noise_sd: 0.0,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let ids: Vec<String> = ds.examples().iter().map(|e| e.example_id.clone()).collect();
        let model = train(
            &ds,
            &ids,
            &LossSpec::new(LossKind::Mse),
            &NetConfig::default(),
            &quick_train_config(),
            7,
        )
        .unwrap();
        let preds = predict(&model.net, model.features, &ds, &ids).unwrap();
        let target = ScoreDistribution::from_example(&ds.examples()[0]).unwrap().mean;
        assert!(
            (preds[0].value - target).abs() <= 1.0,
            "prediction {} vs target {target}",
            preds[0].value
        );
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = SyntheticWorldConfig {
            n_examples: 40,
            n_listeners: 5,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let ids: Vec<String> = ds.examples().iter().map(|e| e.example_id.clone()).collect();
        let run = || {
            train(
                &ds,
                &ids,
                &LossSpec::new(LossKind::Mahalanobis),
                &NetConfig::default(),
                &TrainConfig {
                    epochs: 5,
                    ..TrainConfig::default()
                },
                11,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.net, b.net);
        assert_eq!(a.curve, b.curve);
        let bits = |net: &DenseNet| -> Vec<u64> {
            net.layers()
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.biases).map(|p| p.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a.net), bits(&b.net));
    }

    #[test]
    fn zero_noise_train_fit_is_strong() {
        let cfg = SyntheticWorldConfig {
            n_examples: 500,
            n_listeners: 5,
            listener_bias_sd: 0.0,
            listener_noise_sd: 0.0,
            embedding_dim: 8,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let ids: Vec<String> = ds.examples().iter().map(|e| e.example_id.clone()).collect();
        let model = train(
            &ds,
            &ids,
            &LossSpec::new(LossKind::Mse),
            &NetConfig::default(),
            &TrainConfig::default(),
            13,
        )
        .unwrap();
        let preds = predict(&model.net, model.features, &ds, &ids).unwrap();
        let pred_values: Vec<f64> = preds.iter().map(|p| p.value).collect();
        let targets: Vec<f64> = ds
            .examples()
            .iter()
            .map(|e| ScoreDistribution::from_example(e).unwrap().mean)
            .collect();
        let r = stats::pearson(&pred_values, &targets).unwrap();
        assert!(r >= 0.95, "train-set pearson {r}");
    }

    #[test]
    fn predict_is_repeatable_and_clamped() {
        let cfg = SyntheticWorldConfig {
            n_examples: 20,
            n_listeners: 4,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let ids: Vec<String> = ds.examples().iter().map(|e| e.example_id.clone()).collect();
        let model = train(
            &ds,
            &ids,
            &LossSpec::new(LossKind::Mse),
            &NetConfig::default(),
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            3,
        )
        .unwrap();
        let a = predict(&model.net, model.features, &ds, &ids).unwrap();
        let b = predict(&model.net, model.features, &ds, &ids).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..=100.0).contains(&p.value)));
        assert!(predict(&model.net, model.features, &ds, &[]).unwrap().is_empty());
        assert!(matches!(
            predict(&model.net, model.features, &ds, &["nope".to_string()]),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn raw_output_is_clamped_at_reporting() {
        use crate::nn::{Activation, Layer};
        // 1-layer net with a huge bias always outputs 120 before clamping.
        let net = DenseNet::new(
            vec![Layer {
                in_dim: 6,
                out_dim: 1,
                weights: vec![0.0; 6],
                biases: vec![120.0],
                activation: Activation::Identity,
            }],
            0.0,
        )
        .unwrap();
        let cfg = SyntheticWorldConfig {
            n_examples: 1,
            n_listeners: 2,
            embedding_dim: 2,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let ids = vec![ds.examples()[0].example_id.clone()];
        let preds = predict(&net, FeatureMode::ConcatAbsDiff, &ds, &ids).unwrap();
        assert_eq!(preds[0].value, 100.0);
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let cfg = SyntheticWorldConfig {
            n_examples: 4,
            n_listeners: 2,
            ..SyntheticWorldConfig::default()
        };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        assert!(matches!(
            train(
                &ds,
                &[],
                &LossSpec::new(LossKind::Mse),
                &NetConfig::default(),
                &TrainConfig::default(),
                1,
            ),
            Err(Error::EmptyInput(_))
        ));
    }
}
