//! Central-difference check of the analytic MLP gradients for both losses.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, backward, cost_sensitive_loss, cross_entropy, forward, init_mlp, Activation, CostMatrix, ParamSet};
use crate::rng::{stream, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub probes_per_layer: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![784, 80, 60, 10],
            activation: Activation::Elu,
            batch_size: 4,
            probes_per_layer: 100,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    CostSensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: usize,
    pub probes: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with the denominator floored so that coordinates whose
/// true gradient is ~0 are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Mean of `w_i * (logsumexp(z_i) - z_i[y_i])`, written out per sample.
fn frozen_loss(logits: ArrayView2<f64>, labels: &[usize], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += weights[i] * (lse - row[labels[i]]);
    }
    total / labels.len() as f64
}

fn loss_at(params: &ParamSet, x: &Array2<f64>, labels: &[usize], weights: &[f64]) -> Result<f64> {
    let (logits, _) = forward(params, x.view())?;
    Ok(frozen_loss(logits.view(), labels, weights))
}

fn check_loss(cfg: &GradcheckConfig, kind: LossKind) -> Result<GradcheckReport> {
    let mut rng = stream(cfg.seed, Role::Probe, kind as u64, 0);
    let mut params = init_mlp(&cfg.layer_sizes, cfg.activation, cfg.seed)?;
    for layer in &mut params.tensors.layers {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let m = params.num_classes();
    let d = cfg.layer_sizes[0];
    let x = Array2::from_shape_fn((cfg.batch_size, d), |_| rng.random::<f64>());
    let labels: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..m)).collect();
    let costs = match kind {
        LossKind::CrossEntropy => CostMatrix::unit(m),
        LossKind::CostSensitive => {
            CostMatrix::new(Array2::from_shape_fn((m, m), |(i, j)| if i == j { 1.0 } else { rng.random_range(1.0..5.0) }))?
        }
    };

    let (logits, cache) = forward(&params, x.view())?;
    let (_, d_logits) = match kind {
        LossKind::CrossEntropy => cross_entropy(logits.view(), &labels),
        LossKind::CostSensitive => cost_sensitive_loss(logits.view(), &labels, &costs),
    };
    let grads = backward(&params, &cache, d_logits.view())?;
    let weights: Vec<f64> = logits
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(row, &y)| costs.get(y, argmax(row.as_slice().unwrap_or(&row.to_vec()))))
        .collect();

    let mut layers = Vec::new();
    for li in 0..params.num_layers() {
        let (nw, nb) = (grads.layers[li].weight.len(), grads.layers[li].bias.len());
        let nb_probe = nb.min((cfg.probes_per_layer / 10).max(1));
        let nw_probe = nw.min(cfg.probes_per_layer.saturating_sub(nb_probe));
        let nb_probe = nb.min(cfg.probes_per_layer - nw_probe);
        let mut coords: Vec<usize> = index::sample(&mut rng, nw, nw_probe).into_vec();
        coords.extend(index::sample(&mut rng, nb, nb_probe).into_iter().map(|b| nw + b));
        let mut worst = 0.0f64;
        for &c in &coords {
            let analytic = if c < nw {
                grads.layers[li].weight.as_slice().expect("standard layout")[c]
            } else {
                grads.layers[li].bias[c - nw]
            };
            let shifted = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let layer = &mut p.tensors.layers[li];
                if c < nw {
                    layer.weight.as_slice_mut().expect("standard layout")[c] += delta;
                } else {
                    layer.bias[c - nw] += delta;
                }
                loss_at(&p, &x, &labels, &weights)
            };
            let numeric = (shifted(cfg.step)? - shifted(-cfg.step)?) / (2.0 * cfg.step);
            worst = worst.max(rel_err(analytic, numeric));
        }
        layers.push(LayerCheck {
            layer: li,
            probes: coords.len(),
            max_rel_err: worst,
        });
    }
    Ok(GradcheckReport {
        loss: kind,
        tolerance: cfg.tolerance,
        layers,
    })
}

/// Checks both losses. Each report lists the worst relative error per layer.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<GradcheckReport>> {
    if cfg.batch_size == 0 || cfg.probes_per_layer == 0 || !(cfg.step > 0.0) {
        return Err(Error::InvalidArgument(format!("bad gradcheck settings {cfg:?}")));
    }
    [LossKind::CrossEntropy, LossKind::CostSensitive]
        .into_iter()
        .map(|k| check_loss(cfg, k))
        .collect()
}
