//! JSON checkpoint format for trained regressors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::LossSpec;
use crate::nn::{Activation, AdamState, DenseNet, Layer};

use super::{FeatureMode, NetConfig, TrainConfig, TrainedModel};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSnapshot {
    pub loss: LossSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Serialized model: layer shapes, parameters (row-major), optimizer state,
/// the training config and the fingerprint of the dataset it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// [input_dim, hidden_dim, ..., output_dim]
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rate: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub optimizer_state: Option<AdamState>,
    pub training_config: TrainingSnapshot,
    pub dataset_fingerprint: String,
}

impl Checkpoint {
    pub fn from_model(
        model: &TrainedModel,
        training_config: TrainingSnapshot,
        dataset_fingerprint: String,
    ) -> Self {
        let layers = model.net.layers();
        let mut layer_dims = vec![layers[0].in_dim];
        layer_dims.extend(layers.iter().map(|l| l.out_dim));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_dims,
            activations: layers.iter().map(|l| l.activation).collect(),
            dropout_rate: model.net.dropout_rate(),
            weights: layers.iter().map(|l| l.weights.clone()).collect(),
            biases: layers.iter().map(|l| l.biases.clone()).collect(),
            optimizer_state: Some(model.optimizer_state.clone()),
            training_config,
            dataset_fingerprint,
        }
    }

    /// Rebuild the network; validates shapes and parameter finiteness.
    pub fn to_net(&self) -> Result<DenseNet> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let n_layers = self.layer_dims.len().saturating_sub(1);
        if n_layers == 0
            || self.activations.len() != n_layers
            || self.weights.len() != n_layers
            || self.biases.len() != n_layers
        {
            return Err(Error::InvalidCheckpoint(
                "layer_dims, activations, weights and biases disagree".into(),
            ));
        }
        let layers: Vec<Layer> = (0..n_layers)
            .map(|i| Layer {
                in_dim: self.layer_dims[i],
                out_dim: self.layer_dims[i + 1],
                weights: self.weights[i].clone(),
                biases: self.biases[i].clone(),
                activation: self.activations[i],
            })
            .collect();
        DenseNet::new(layers, self.dropout_rate)
            .map_err(|e| Error::InvalidCheckpoint(e.to_string()))
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.training_config.net.features
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidCheckpoint(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }
}
