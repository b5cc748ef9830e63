//! Regression losses over listener score distributions.
//!
//! Besides plain and density-weighted MSE, two losses measure the error in
//! units of the per-example score spread: `|E(X) - pred| / sigma(X)` against
//! the mean, and the same denominator against raw individual scores. A
//! sigma floor keeps constant-score examples from producing infinite loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ScoreDistribution;

/// Loss family selector. Density weights for `WeightedMse` are computed by
/// the trainer from training folds only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    WeightedMse,
    Mahalanobis,
    MahalanobisSingle,
}

impl LossKind {
    pub const VALID: &'static str = "mse, wmse, mahalanobis, mahalanobis-single";
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::Mse => "mse",
            LossKind::WeightedMse => "wmse",
            LossKind::Mahalanobis => "mahalanobis",
            LossKind::MahalanobisSingle => "mahalanobis-single",
        };
        write!(f, "{s}")
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "wmse" => Ok(LossKind::WeightedMse),
            "mahalanobis" => Ok(LossKind::Mahalanobis),
            "mahalanobis-single" => Ok(LossKind::MahalanobisSingle),
            other => Err(Error::UnknownLoss {
                got: other.to_string(),
                valid: Self::VALID.to_string(),
            }),
        }
    }
}

/// Loss kind plus the sigma floor used by the sigma-normalized losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub epsilon_sd: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            epsilon_sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_sd > 0.0 && self.epsilon_sd.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("epsilon_sd must be > 0".into()))
        }
    }
}

pub fn mse(pred: f64, target_mean: f64) -> f64 {
    let d = pred - target_mean;
    d * d
}

/// d/dpred of [`mse`].
pub fn mse_grad(pred: f64, target_mean: f64) -> f64 {
    2.0 * (pred - target_mean)
}

pub fn weighted_mse(pred: f64, target_mean: f64, weight: f64) -> f64 {
    weight * mse(pred, target_mean)
}

pub fn weighted_mse_grad(pred: f64, target_mean: f64, weight: f64) -> f64 {
    weight * mse_grad(pred, target_mean)
}

fn sigma_floor(dist: &ScoreDistribution, epsilon_sd: f64) -> f64 {
    dist.sd.max(epsilon_sd)
}

/// |E(X) - pred| / max(sigma(X), epsilon): the prediction error measured in
/// standard deviations of the listener score distribution.
pub fn mahalanobis(pred: f64, dist: &ScoreDistribution, epsilon_sd: f64) -> f64 {
    (dist.mean - pred).abs() / sigma_floor(dist, epsilon_sd)
}

/// d/dpred of [`mahalanobis`]; the subgradient at pred = mean is 0.
pub fn mahalanobis_grad(pred: f64, dist: &ScoreDistribution, epsilon_sd: f64) -> f64 {
    let diff = pred - dist.mean;
    if diff == 0.0 {
        0.0
    } else {
        diff.signum() / sigma_floor(dist, epsilon_sd)
    }
}

/// Sigma-normalized absolute error against one raw listener score; the
/// denominator is still the per-example sigma over all listeners.
pub fn mahalanobis_single(
    pred: f64,
    individual_score: f64,
    dist: &ScoreDistribution,
    epsilon_sd: f64,
) -> Result<f64> {
    if !dist.raw.contains(&individual_score) {
        return Err(Error::ScoreNotInDistribution {
            example_id: dist.example_id.clone(),
            score: individual_score,
        });
    }
    Ok((individual_score - pred).abs() / sigma_floor(dist, epsilon_sd))
}

/// d/dpred of [`mahalanobis_single`] (membership already checked).
pub fn mahalanobis_single_grad(
    pred: f64,
    individual_score: f64,
    dist: &ScoreDistribution,
    epsilon_sd: f64,
) -> f64 {
    let diff = pred - individual_score;
    if diff == 0.0 {
        0.0
    } else {
        diff.signum() / sigma_floor(dist, epsilon_sd)
    }
}
