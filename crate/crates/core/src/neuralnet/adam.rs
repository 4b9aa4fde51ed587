//! Adam optimizer with bias correction, mirroring the network's parameter
//! layout.

use ndarray::{Array1, Array2};

use super::{Gradients, Network, NetworkError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerMoments {
    pub weights_m: Array2<f64>,
    pub weights_v: Array2<f64>,
    pub bias_m: Array1<f64>,
    pub bias_v: Array1<f64>,
    pub bn_m: Option<(Array1<f64>, Array1<f64>)>,
    pub bn_v: Option<(Array1<f64>, Array1<f64>)>,
}

/// First/second moment accumulators plus the step counter, shaped after the
/// network the state was created for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub(crate) step: u64,
    pub(crate) moments: Vec<LayerMoments>,
}

impl AdamState {
    pub fn new(network: &Network, learning_rate: f64) -> Self {
        let moments = network
            .layers()
            .iter()
            .map(|layer| LayerMoments {
                weights_m: Array2::zeros(layer.weights.raw_dim()),
                weights_v: Array2::zeros(layer.weights.raw_dim()),
                bias_m: Array1::zeros(layer.bias.len()),
                bias_v: Array1::zeros(layer.bias.len()),
                bn_m: layer.batch_norm.as_ref().map(|bn| {
                    (
                        Array1::zeros(bn.gamma.len()),
                        Array1::zeros(bn.beta.len()),
                    )
                }),
                bn_v: layer.batch_norm.as_ref().map(|bn| {
                    (
                        Array1::zeros(bn.gamma.len()),
                        Array1::zeros(bn.beta.len()),
                    )
                }),
            })
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of every network parameter from `grads`.
pub fn adam_step(
    network: &mut Network,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NetworkError> {
    if grads.layers.len() != network.layers().len()
        || state.moments.len() != network.layers().len()
    {
        return Err(NetworkError::ShapeMismatch);
    }
    for ((layer, grad), moment) in network
        .layers()
        .iter()
        .zip(&grads.layers)
        .zip(&state.moments)
    {
        if layer.weights.raw_dim() != grad.weights.raw_dim()
            || layer.weights.raw_dim() != moment.weights_m.raw_dim()
            || layer.bias.len() != grad.bias.len()
            || layer.batch_norm.is_some() != grad.batch_norm.is_some()
        {
            return Err(NetworkError::ShapeMismatch);
        }
    }

    state.step += 1;
    let t = state.step as i32;
    // Folding both bias corrections into the step size is algebraically the
    // standard update.
    let rate = state.learning_rate * (1.0 - state.beta2.powi(t)).sqrt()
        / (1.0 - state.beta1.powi(t));
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);

    let update = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * grad;
        *v = b2 * *v + (1.0 - b2) * grad * grad;
        *param -= rate * *m / (v.sqrt() + eps);
    };

    for ((layer, grad), moment) in network
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.moments.iter_mut())
    {
        ndarray::Zip::from(&mut layer.weights)
            .and(&grad.weights)
            .and(&mut moment.weights_m)
            .and(&mut moment.weights_v)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.bias)
            .and(&grad.bias)
            .and(&mut moment.bias_m)
            .and(&mut moment.bias_v)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        if let (Some(bn), Some(bn_grad), Some(bn_m), Some(bn_v)) = (
            layer.batch_norm.as_mut(),
            grad.batch_norm.as_ref(),
            moment.bn_m.as_mut(),
            moment.bn_v.as_mut(),
        ) {
            ndarray::Zip::from(&mut bn.gamma)
                .and(&bn_grad.gamma)
                .and(&mut bn_m.0)
                .and(&mut bn_v.0)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut bn.beta)
                .and(&bn_grad.beta)
                .and(&mut bn_m.1)
                .and(&mut bn_v.1)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
    Ok(())
}
