//! Minimal feedforward neural-network kernel: forward pass, backpropagation,
//! Adam, dropout, and batch normalization — enough for the actor and critic.
//!
//! Layers apply, in order: affine transform, activation, batch normalization
//! (where configured, after the activation), then dropout (training mode
//! only, with inverted scaling). Training-mode forwards retain the caches
//! backpropagation needs; inference-mode forwards are pure and use the
//! batch-norm running statistics.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_adam, load_network, save_adam, save_network};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BN_EPSILON: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.99;
/// Init range of the last layer, standard for DDPG-style heads.
const FINAL_LAYER_INIT: f64 = 3e-3;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("batch width {got} does not match layer input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("layer {layer} input width {next_in} does not match previous output {prev_out}")]
    LayerChainMismatch {
        layer: usize,
        prev_out: usize,
        next_in: usize,
    },
    #[error("backward called without a cached training-mode forward")]
    NoForwardCache,
    #[error("networks have different architectures")]
    ArchitectureMismatch,
    #[error("gradient shapes do not match network parameters")]
    ShapeMismatch,
    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Rectifier,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given pre-activation `z` and activated value `a`.
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
    /// Fraction of units dropped from this layer's output in training mode.
    pub dropout_rate: f64,
    /// Batch normalization of this layer's output, applied after activation.
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
            dropout_rate: 0.0,
            batch_norm: false,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate));
        self.dropout_rate = rate;
        self
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    /// `[input_width, output_width]`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub batch_norm: Option<BatchNormParams>,
}

struct LayerCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    activated: Array2<f64>,
    /// Batch statistics used in this forward, when batch-norm is on.
    bn: Option<BnCache>,
    dropout_mask: Option<Array2<f64>>,
}

struct BnCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Feedforward network with per-layer dropout and batch normalization.
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    mode: Mode,
    rng: ChaCha8Rng,
    cache: Option<Vec<LayerCache>>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self {
            specs: self.specs.clone(),
            layers: self.layers.clone(),
            mode: self.mode,
            rng: self.rng.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("specs", &self.specs)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Network {
    /// Builds a network with fan-in uniform initialization (the final layer
    /// gets a tight ±3e-3 range) and a seeded dropout stream.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self, NetworkError> {
        for (i, pair) in specs.windows(2).enumerate() {
            if pair[0].output_width != pair[1].input_width {
                return Err(NetworkError::LayerChainMismatch {
                    layer: i + 1,
                    prev_out: pair[0].output_width,
                    next_in: pair[1].input_width,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = specs.len().saturating_sub(1);
        let layers = specs
            .iter()
            .enumerate()
            .map(|(idx, spec)| {
                let range = if idx == last {
                    FINAL_LAYER_INIT
                } else {
                    1.0 / (spec.input_width as f64).sqrt()
                };
                let weights = Array2::from_shape_fn(
                    (spec.input_width, spec.output_width),
                    |_| rng.gen_range(-range..range),
                );
                let bias =
                    Array1::from_shape_fn(spec.output_width, |_| rng.gen_range(-range..range));
                let batch_norm = spec.batch_norm.then(|| BatchNormParams {
                    gamma: Array1::ones(spec.output_width),
                    beta: Array1::zeros(spec.output_width),
                    running_mean: Array1::zeros(spec.output_width),
                    running_var: Array1::ones(spec.output_width),
                });
                Layer {
                    weights,
                    bias,
                    batch_norm,
                }
            })
            .collect();
        Ok(Self {
            specs,
            layers,
            mode: Mode::Inference,
            rng,
            cache: None,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        if mode == Mode::Inference {
            self.cache = None;
        }
    }

    pub fn input_width(&self) -> usize {
        self.specs.first().map_or(0, |s| s.input_width)
    }

    pub fn output_width(&self) -> usize {
        self.specs.last().map_or(0, |s| s.output_width)
    }

    /// Reseeds the dropout stream (after loading a checkpoint, for example).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Mode-dependent forward pass: training mode draws dropout masks,
    /// updates batch-norm running statistics, and retains the caches
    /// `backward` consumes.
    pub fn forward(&mut self, batch: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        match self.mode {
            Mode::Training => self.forward_training(batch),
            Mode::Inference => self.infer(batch),
        }
    }

    /// Pure inference-mode forward, independent of the mode flag.
    pub fn infer(&self, batch: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        self.check_width(batch)?;
        let mut h = batch.clone();
        for (layer, spec) in self.layers.iter().zip(&self.specs) {
            let z = h.dot(&layer.weights) + &layer.bias;
            let mut a = z.mapv(|v| spec.activation.apply(v));
            if let Some(bn) = &layer.batch_norm {
                for mut row in a.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = bn.gamma[j] * (*v - bn.running_mean[j])
                            / (bn.running_var[j] + BN_EPSILON).sqrt()
                            + bn.beta[j];
                    }
                }
            }
            h = a;
        }
        Ok(h)
    }

    fn forward_training(&mut self, batch: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        self.check_width(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = batch.clone();
        for (layer, spec) in self.layers.iter_mut().zip(&self.specs) {
            let input = h;
            let pre_activation = input.dot(&layer.weights) + &layer.bias;
            let activated = pre_activation.mapv(|v| spec.activation.apply(v));
            let mut out = activated.clone();

            let bn_cache = if let Some(bn) = layer.batch_norm.as_mut() {
                let mean = activated.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = &activated - &mean;
                let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                let normalized = &centered * &inv_std;
                out = &normalized * &bn.gamma + &bn.beta;
                bn.running_mean = BN_MOMENTUM * &bn.running_mean + (1.0 - BN_MOMENTUM) * &mean;
                bn.running_var = BN_MOMENTUM * &bn.running_var + (1.0 - BN_MOMENTUM) * &var;
                Some(BnCache {
                    normalized,
                    inv_std,
                })
            } else {
                None
            };

            let dropout_mask = if spec.dropout_rate > 0.0 {
                let keep = 1.0 - spec.dropout_rate;
                let mask = Array2::from_shape_fn(out.raw_dim(), |_| {
                    if self.rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out = &out * &mask;
                Some(mask)
            } else {
                None
            };

            caches.push(LayerCache {
                input,
                pre_activation,
                activated,
                bn: bn_cache,
                dropout_mask,
            });
            h = out;
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Backpropagates `upstream` (dL/d output, summed over whatever loss
    /// normalization the caller uses) through the caches of the latest
    /// training-mode forward. Returns parameter gradients and the gradient
    /// with respect to the batch input.
    pub fn backward(&mut self, upstream: &Array2<f64>) -> Result<BackwardResult, NetworkError> {
        let caches = self.cache.take().ok_or(NetworkError::NoForwardCache)?;
        if upstream.ncols() != self.output_width() || upstream.nrows() != caches[0].input.nrows() {
            return Err(NetworkError::ShapeMismatch);
        }

        let mut grads: Vec<LayerGradients> = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for ((layer, spec), cache) in self
            .layers
            .iter()
            .zip(&self.specs)
            .zip(caches.iter())
            .rev()
        {
            if let Some(mask) = &cache.dropout_mask {
                g = &g * mask;
            }

            let (bn_grads, after_bn) = if let Some(bn) = &layer.batch_norm {
                let bn_cache = cache.bn.as_ref().expect("bn cache present");
                let m = g.nrows() as f64;
                let dgamma = (&g * &bn_cache.normalized).sum_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0));
                let dxhat = &g * &bn.gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &bn_cache.normalized).sum_axis(Axis(0));
                // d/da of batch normalization with biased batch variance.
                let da = (&(&dxhat * m) - &sum_dxhat
                    - &(&bn_cache.normalized * &sum_dxhat_xhat))
                    * &bn_cache.inv_std.mapv(|v| v / m);
                (Some((dgamma, dbeta)), da)
            } else {
                (None, g)
            };

            let mut dz = after_bn;
            ndarray::Zip::from(&mut dz)
                .and(&cache.pre_activation)
                .and(&cache.activated)
                .for_each(|d, &z, &a| *d *= spec.activation.derivative(z, a));

            let dw = cache.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            g = dz.dot(&layer.weights.t());
            grads.push(LayerGradients {
                weights: dw,
                bias: db,
                batch_norm: bn_grads.map(|(gamma, beta)| BnGradients { gamma, beta }),
            });
        }
        grads.reverse();
        Ok(BackwardResult {
            gradients: Gradients { layers: grads },
            input_gradient: g,
        })
    }

    /// Target-network update: `theta' <- tau*theta + (1-tau)*theta'` for
    /// every parameter and batch-norm running statistic.
    pub fn soft_update_from(&mut self, source: &Network, tau: f64) -> Result<(), NetworkError> {
        if self.specs != source.specs {
            return Err(NetworkError::ArchitectureMismatch);
        }
        let blend = |target: &mut Array1<f64>, source: &Array1<f64>| {
            *target = tau * source + (1.0 - tau) * &*target;
        };
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weights = tau * &src.weights + (1.0 - tau) * &dst.weights;
            blend(&mut dst.bias, &src.bias);
            if let (Some(d), Some(s)) = (dst.batch_norm.as_mut(), src.batch_norm.as_ref()) {
                blend(&mut d.gamma, &s.gamma);
                blend(&mut d.beta, &s.beta);
                blend(&mut d.running_mean, &s.running_mean);
                blend(&mut d.running_var, &s.running_var);
            }
        }
        Ok(())
    }

    /// Hard copy of every parameter and statistic from `source`.
    pub fn copy_parameters_from(&mut self, source: &Network) -> Result<(), NetworkError> {
        self.soft_update_from(source, 1.0)
    }

    /// Number of trainable parameters (weights, biases, batch-norm scale and
    /// shift), in the flat order used by `parameter`/`set_parameter`.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum()
    }

    pub fn parameter(&self, index: usize) -> f64 {
        self.visit_parameter(index, None)
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        self.visit_parameter_mut(index, value);
    }

    fn visit_parameter(&self, mut index: usize, _: Option<()>) -> f64 {
        for layer in &self.layers {
            for array in layer_param_arrays(layer) {
                if index < array.len() {
                    return array[index];
                }
                index -= array.len();
            }
        }
        panic!("parameter index out of range");
    }

    fn visit_parameter_mut(&mut self, mut index: usize, value: f64) {
        for layer in &mut self.layers {
            for array in layer_param_arrays_mut(layer) {
                if index < array.len() {
                    array[index] = value;
                    return;
                }
                index -= array.len();
            }
        }
        panic!("parameter index out of range");
    }

    fn check_width(&self, batch: &Array2<f64>) -> Result<(), NetworkError> {
        if batch.ncols() != self.input_width() {
            return Err(NetworkError::WidthMismatch {
                expected: self.input_width(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn from_parts(specs: Vec<LayerSpec>, layers: Vec<Layer>) -> Self {
        Self {
            specs,
            layers,
            mode: Mode::Inference,
            rng: ChaCha8Rng::seed_from_u64(0),
            cache: None,
        }
    }
}

/// Flattened views over a layer's trainable parameters, in checkpoint order.
fn layer_param_arrays(layer: &Layer) -> Vec<&[f64]> {
    let mut out = vec![
        layer.weights.as_slice().expect("contiguous"),
        layer.bias.as_slice().expect("contiguous"),
    ];
    if let Some(bn) = &layer.batch_norm {
        out.push(bn.gamma.as_slice().expect("contiguous"));
        out.push(bn.beta.as_slice().expect("contiguous"));
    }
    out
}

fn layer_param_arrays_mut(layer: &mut Layer) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::with_capacity(4);
    out.push(layer.weights.as_slice_mut().expect("contiguous"));
    out.push(layer.bias.as_slice_mut().expect("contiguous"));
    if let Some(bn) = &mut layer.batch_norm {
        out.push(bn.gamma.as_slice_mut().expect("contiguous"));
        out.push(bn.beta.as_slice_mut().expect("contiguous"));
    }
    out
}

/// Gradient of the loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub batch_norm: Option<BnGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGradients {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Parameter gradients for a whole network, aligned with its layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    /// Flat access aligned with `Network::parameter` indexing.
    pub fn parameter(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            let arrays: Vec<&[f64]> = {
                let mut v = vec![
                    layer.weights.as_slice().expect("contiguous"),
                    layer.bias.as_slice().expect("contiguous"),
                ];
                if let Some(bn) = &layer.batch_norm {
                    v.push(bn.gamma.as_slice().expect("contiguous"));
                    v.push(bn.beta.as_slice().expect("contiguous"));
                }
                v
            };
            for array in arrays {
                if index < array.len() {
                    return array[index];
                }
                index -= array.len();
            }
        }
        panic!("gradient index out of range");
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum()
    }
}

pub struct BackwardResult {
    pub gradients: Gradients,
    /// dL/d(input), `[batch, input_width]`; the critic-to-actor path needs
    /// the action columns of this.
    pub input_gradient: Array2<f64>,
}
