//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamLayerState {
    m_weights: Vec<f64>,
    v_weights: Vec<f64>,
    m_biases: Vec<f64>,
    v_biases: Vec<f64>,
}

/// First/second moment estimates per layer plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    layers: Vec<AdamLayerState>,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        AdamState {
            step: 0,
            layers: net
                .layers()
                .iter()
                .map(|l| AdamLayerState {
                    m_weights: vec![0.0; l.weights.len()],
                    v_weights: vec![0.0; l.weights.len()],
                    m_biases: vec![0.0; l.biases.len()],
                    v_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }
}

/// One Adam update of a flat parameter slice. `step` must already be
/// incremented (first call passes 1). `path` labels gradient errors.
pub fn adam_update(
    values: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    params: &AdamParams,
    path: &str,
) -> Result<()> {
    debug_assert_eq!(values.len(), grads.len());
    let bc1 = 1.0 - params.beta1.powi(step as i32);
    let bc2 = 1.0 - params.beta2.powi(step as i32);
    for (i, (&g, value)) in grads.iter().zip(values.iter_mut()).enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                path: format!("{path}[{i}]"),
            });
        }
        m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g;
        v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *value -= params.learning_rate * m_hat / (v_hat.sqrt() + params.epsilon);
    }
    Ok(())
}

/// Apply one Adam step to every parameter of the network.
pub fn adam_step(
    net: &mut DenseNet,
    grads: &Gradients,
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    if state.layers.len() != net.layers().len() {
        return Err(Error::StaleCache("optimizer state layout mismatch".into()));
    }
    state.step += 1;
    let step = state.step;
    for (li, (layer, ls)) in net
        .layers_mut()
        .iter_mut()
        .zip(state.layers.iter_mut())
        .enumerate()
    {
        adam_update(
            &mut layer.weights,
            &grads.layers[li].weights,
            &mut ls.m_weights,
            &mut ls.v_weights,
            step,
            params,
            &format!("layer{li}.weights"),
        )?;
        adam_update(
            &mut layer.biases,
            &grads.layers[li].biases,
            &mut ls.m_biases,
            &mut ls.v_biases,
            step,
            params,
            &format!("layer{li}.biases"),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn scalar_net(weight: f64) -> DenseNet {
        DenseNet::new(
            vec![Layer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![weight],
                biases: vec![0.0],
                activation: Activation::Identity,
            }],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = scalar_net(0.75);
        let mut state = AdamState::new(&net);
        let grads = Gradients::zeros_like(&net);
        adam_step(&mut net, &grads, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(net.layers()[0].weights[0], 0.75);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].weights[0] = 2.0;
        let params = AdamParams {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        adam_step(&mut net, &grads, &mut state, &params).unwrap();
        // m = 0.1*2 = 0.2; v = 0.001*4 = 0.004; m_hat = 2; v_hat = 4;
        // theta = 0.5 - 0.1 * 2 / (2 + 1e-8)
        let want = 0.5 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((net.layers()[0].weights[0] - want).abs() < 1e-15);
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let run = || {
            let mut net = scalar_net(0.5);
            let mut state = AdamState::new(&net);
            let params = AdamParams::default();
            for i in 0..100 {
                let mut grads = Gradients::zeros_like(&net);
                grads.layers[0].weights[0] = (i as f64 * 0.37).sin();
                grads.layers[0].biases[0] = (i as f64 * 0.11).cos();
                adam_step(&mut net, &grads, &mut state, &params).unwrap();
            }
            (
                net.layers()[0].weights[0].to_bits(),
                net.layers()[0].biases[0].to_bits(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_reports_path() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let mut grads = Gradients::zeros_like(&net);
        grads.layers[0].biases[0] = f64::NAN;
        let err = adam_step(&mut net, &grads, &mut state, &AdamParams::default()).unwrap_err();
        match err {
            Error::NonFiniteGradient { path } => assert_eq!(path, "layer0.biases[0]"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
