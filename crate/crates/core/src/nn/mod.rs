//! Minimal dense-network machinery: forward pass with inverted dropout,
//! exact backward pass, and the Adam optimizer.
//!
//! Sized for a two-layer regressor and the toy embedding encoder; there is
//! no autograd graph, gradients are hand-derived and checked against finite
//! differences in the test suite.

mod adam;
pub mod loss;

pub use adam::{adam_step, adam_update, AdamParams, AdamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// max(x, slope * x); the subgradient at x = 0 is `slope` by convention.
    LeakyRelu { slope: f64 },
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One affine layer with activation; weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Random init: weights ~ N(0, 1/sqrt(in_dim)), biases zero.
    pub fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("valid sd");
        Layer {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
            biases: vec![0.0; out_dim],
            activation,
        }
    }
}

/// Execution mode of a forward pass. Dropout is active only in `Train`
/// mode, with masks drawn deterministically from the given seed;
/// `Infer` applies no mask and no scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Infer,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Pre-activation values z = W a + b.
    pre: Vec<f64>,
    /// Layer output after activation and (in train mode) dropout mask.
    post: Vec<f64>,
    /// Inverted-dropout mask values, 0 or 1/(1-p); empty when inactive.
    mask: Vec<f64>,
}

/// Activation record of one forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    layers: Vec<LayerCache>,
}

/// Parameter gradients of a scalar loss, mirroring the network layout, plus
/// the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d += scale * s;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d += scale * s;
            }
        }
        for (d, s) in self.input.iter_mut().zip(&other.input) {
            *d += scale * s;
        }
    }
}

/// A feedforward network of dense layers with a shared dropout rate on
/// hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    dropout_rate: f64,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} parameter shapes do not match declared dims"
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.biases)
                .any(|p| !p.is_finite())
            {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            if i > 0 && layers[i - 1].out_dim != layer.in_dim {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].out_dim,
                    got: layer.in_dim,
                    context: format!("layer {i} input"),
                });
            }
        }
        Ok(DenseNet {
            layers,
            dropout_rate,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    /// Forward pass with a vector output.
    pub fn forward_vec(&self, input: &[f64], mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
                context: "forward input".into(),
            });
        }
        let mut dropout_rng = match mode {
            Mode::Train { dropout_seed } if self.dropout_rate > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(dropout_seed))
            }
            _ => None,
        };
        let mut cache = ForwardCache {
            input: input.to_vec(),
            layers: Vec::with_capacity(self.layers.len()),
        };
        let mut activation = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.biases.clone();
            for (o, z) in pre.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *z += row.iter().zip(&activation).map(|(w, a)| w * a).sum::<f64>();
            }
            let mut post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            let mask = match (&mut dropout_rng, li < last) {
                (Some(rng), true) => {
                    let keep_scale = 1.0 / (1.0 - self.dropout_rate);
                    let mask: Vec<f64> = (0..post.len())
                        .map(|_| {
                            if rng.random::<f64>() < self.dropout_rate {
                                0.0
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    for (h, m) in post.iter_mut().zip(&mask) {
                        *h *= m;
                    }
                    mask
                }
                _ => Vec::new(),
            };
            if post.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {li} output")));
            }
            cache.layers.push(LayerCache {
                pre,
                post: post.clone(),
                mask,
            });
            activation = post;
        }
        Ok((activation, cache))
    }

    /// Forward pass for scalar-output networks.
    pub fn forward(&self, input: &[f64], mode: Mode) -> Result<(f64, ForwardCache)> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidConfig(format!(
                "scalar forward on a network with output dim {}",
                self.output_dim()
            )));
        }
        let (out, cache) = self.forward_vec(input, mode)?;
        Ok((out[0], cache))
    }

    /// Exact gradients of `sum(upstream * output)` with respect to every
    /// parameter and the input, honoring the dropout masks recorded in the
    /// cache.
    pub fn backward_vec(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        if cache.layers.len() != self.layers.len() || cache.input.len() != self.input_dim() {
            return Err(Error::StaleCache(
                "cache does not match network layout".into(),
            ));
        }
        for (li, (lc, layer)) in cache.layers.iter().zip(&self.layers).enumerate() {
            if lc.pre.len() != layer.out_dim {
                return Err(Error::StaleCache(format!("layer {li} dims changed")));
            }
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
                context: "upstream gradient".into(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let lc = &cache.layers[li];
            // Through the dropout mask (post = mask * act(pre)).
            if !lc.mask.is_empty() {
                for (gv, m) in g.iter_mut().zip(&lc.mask) {
                    *gv *= m;
                }
            }
            // Through the activation.
            let dz: Vec<f64> = g
                .iter()
                .zip(&lc.pre)
                .map(|(gv, &z)| gv * layer.activation.derivative(z))
                .collect();
            let a_prev: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.layers[li - 1].post
            };
            let lg = &mut grads.layers[li];
            for (o, &dzo) in dz.iter().enumerate() {
                lg.biases[o] = dzo;
                let row = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, a) in row.iter_mut().zip(a_prev) {
                    *w = dzo * a;
                }
            }
            let mut g_prev = vec![0.0; layer.in_dim];
            for (o, &dzo) in dz.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gp, w) in g_prev.iter_mut().zip(row) {
                    *gp += w * dzo;
                }
            }
            g = g_prev;
        }
        grads.input = g;
        Ok(grads)
    }

    /// Backward pass for scalar-output networks.
    pub fn backward(&self, cache: &ForwardCache, upstream: f64) -> Result<Gradients> {
        self.backward_vec(cache, &[upstream])
    }
}
