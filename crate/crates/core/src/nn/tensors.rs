use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight matrix (`fan_in x fan_out`) and bias vector of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sum_sq(&self) -> f64 {
        self.weight.iter().chain(self.bias.iter()).map(|v| v * v).sum()
    }
}

/// An ordered stack of layer tensors. Used for parameters, gradients and
/// control variates alike, which all share the model's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensors {
    pub layers: Vec<Layer>,
}

pub type GradSet = Tensors;
pub type ControlVariate = Tensors;

impl Tensors {
    pub fn zeros_like(other: &Tensors) -> Self {
        Self {
            layers: other.layers.iter().map(|l| {
                let (i, o) = l.shape();
                Layer::zeros(i, o)
            }).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(Layer::shape).collect()
    }

    pub fn check_same_shape(&self, other: &Tensors) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shapes(),
                other.shapes()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// All entries, layer by layer, weights (row-major) before biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zip_with(&self, other: &Tensors, f: impl Fn(f64, f64) -> f64 + Copy) -> Result<Tensors> {
        self.check_same_shape(other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| Layer {
                weight: Zip::from(&a.weight).and(&b.weight).map_collect(|&x, &y| f(x, y)),
                bias: Zip::from(&a.bias).and(&b.bias).map_collect(|&x, &y| f(x, y)),
            })
            .collect();
        Ok(Tensors { layers })
    }

    pub fn add(&self, other: &Tensors) -> Result<Tensors> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensors) -> Result<Tensors> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensors {
        Tensors {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| v * s),
                    bias: l.bias.mapv(|v| v * s),
                })
                .collect(),
        }
    }

    /// `self += s * other`, in place.
    pub fn axpy(&mut self, s: f64, other: &Tensors) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(s, &b.weight);
            a.bias.scaled_add(s, &b.bias);
        }
        Ok(())
    }
}

/// `params - lr * (grads + correction)`.
pub fn sgd_step(params: &Tensors, grads: &GradSet, lr: f64, correction: Option<&Tensors>) -> Result<Tensors> {
    let direction = match correction {
        Some(c) => grads.add(c)?,
        None => {
            params.check_same_shape(grads)?;
            grads.clone()
        }
    };
    params.zip_with(&direction, |p, d| p - lr * d)
}

/// Squared Frobenius norm per layer, weight and bias pooled.
pub fn per_layer_grad_norm_sq(grads: &GradSet) -> Vec<f64> {
    grads.layers.iter().map(Layer::sum_sq).collect()
}
