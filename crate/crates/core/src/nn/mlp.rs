use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::argmax;
use super::tensors::{GradSet, Layer, Tensors};
use crate::error::{Error, Result};
use crate::rng::{stream, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// MLP parameters. Hidden layers use `activation`; the last layer is linear
/// and produces logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub activation: Activation,
    pub tensors: Tensors,
}

impl ParamSet {
    pub fn new(activation: Activation, tensors: Tensors) -> Result<Self> {
        for pair in tensors.layers.windows(2) {
            if pair[0].shape().1 != pair[1].shape().0 {
                return Err(Error::ShapeMismatch(format!(
                    "layer outputs {} do not feed inputs {}",
                    pair[0].shape().1,
                    pair[1].shape().0
                )));
            }
        }
        for l in &tensors.layers {
            if l.bias.len() != l.shape().1 {
                return Err(Error::ShapeMismatch("bias length differs from fan_out".into()));
            }
        }
        Ok(Self { activation, tensors })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.tensors.layers.iter().map(|l| l.shape().0).collect();
        if let Some(last) = self.tensors.layers.last() {
            sizes.push(last.shape().1);
        }
        sizes
    }

    pub fn num_layers(&self) -> usize {
        self.tensors.num_layers()
    }

    pub fn num_classes(&self) -> usize {
        self.tensors.layers.last().map_or(0, |l| l.shape().1)
    }

    pub fn with_tensors(&self, tensors: Tensors) -> Result<Self> {
        self.tensors.check_same_shape(&tensors)?;
        Ok(Self {
            activation: self.activation,
            tensors,
        })
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<ParamSet> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer_sizes {layer_sizes:?} needs at least two non-zero entries"
        )));
    }
    let mut rng = stream(seed, Role::ModelInit, 0, 0);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer {
                weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-s..s)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    ParamSet::new(activation, Tensors { layers })
}

/// Values kept from the forward pass: each layer's input and pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

pub fn forward(params: &ParamSet, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    let layers = &params.tensors.layers;
    let fan_in = layers.first().map_or(0, |l| l.shape().0);
    if batch.ncols() != fan_in {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, first layer expects {fan_in}",
            batch.ncols()
        )));
    }
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = batch.to_owned();
    for (i, layer) in layers.iter().enumerate() {
        let z = a.dot(&layer.weight) + &layer.bias;
        inputs.push(a);
        if i + 1 < layers.len() {
            a = z.mapv(|v| params.activation.apply(v));
        } else {
            a = z.clone();
        }
        pre.push(z);
    }
    Ok((a, ForwardCache { inputs, pre }))
}

pub fn backward(params: &ParamSet, cache: &ForwardCache, d_logits: ArrayView2<f64>) -> Result<GradSet> {
    let layers = &params.tensors.layers;
    if cache.inputs.len() != layers.len() {
        return Err(Error::ShapeMismatch("cache was produced by a different model".into()));
    }
    let last = cache.pre.last().ok_or_else(|| Error::ShapeMismatch("empty model".into()))?;
    if last.dim() != d_logits.dim() {
        return Err(Error::ShapeMismatch(format!(
            "dLogits {:?} vs logits {:?}",
            d_logits.dim(),
            last.dim()
        )));
    }
    let mut grads: Vec<Layer> = Vec::with_capacity(layers.len());
    let mut dz = d_logits.to_owned();
    for i in (0..layers.len()).rev() {
        let weight = cache.inputs[i].t().dot(&dz);
        let bias = dz.sum_axis(Axis(0));
        if i > 0 {
            let da = dz.dot(&layers[i].weight.t());
            let act = params.activation;
            dz = da * &cache.pre[i - 1].mapv(|z| act.derivative(z));
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    Ok(Tensors { layers: grads })
}

/// Argmax class per row (ties to the lowest index).
pub fn predict(params: &ParamSet, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    let (logits, _) = forward(params, features)?;
    Ok(logits.rows().into_iter().map(|r| argmax(r.as_slice().expect("row-major"))).collect())
}
