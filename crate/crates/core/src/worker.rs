//! Worker-side evaluation of a client's submitted parameters on the worker's
//! own test data: layer-wise coefficient EMA, their size-weighted
//! aggregation, and per-class prediction / true-positive / target counts.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, backward, cross_entropy, forward, per_layer_grad_norm_sq, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    /// EMA decay for the layer coefficients.
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eval_epochs")]
    pub eval_epochs: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
}

fn default_nu() -> f64 {
    0.95
}
fn default_eval_epochs() -> usize {
    1
}
fn default_eval_batch() -> usize {
    32
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            nu: default_nu(),
            eval_epochs: default_eval_epochs(),
            batch_size: default_eval_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCoefficients {
    pub xi: Vec<f64>,
    pub worker_id: usize,
    pub sample_count: usize,
}

/// Per-class counts for one (client, worker) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub predicted: Vec<u64>,
    pub true_positive: Vec<u64>,
    pub target: Vec<u64>,
    pub worker_id: usize,
    pub client_id: usize,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.target.len()
    }

    pub fn total(&self) -> u64 {
        self.target.iter().sum()
    }

    /// `TP[i] <= min(predicted[i], target[i])` and matching totals.
    pub fn is_consistent(&self) -> bool {
        let m = self.target.len();
        self.predicted.len() == m
            && self.true_positive.len() == m
            && (0..m).all(|i| self.true_positive[i] <= self.predicted[i].min(self.target[i]))
            && self.predicted.iter().sum::<u64>() == self.total()
    }
}

/// EMA of per-layer squared cross-entropy gradient norms over mini-batches of
/// the worker's test data. Parameters are not updated.
pub fn compute_layer_coefficients(
    theta: &ParamSet,
    worker_test: &LabeledDataset,
    nu: f64,
    eval_epochs: usize,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if worker_test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if !(0.0..1.0).contains(&nu) || batch_size == 0 {
        return Err(Error::InvalidArgument(format!("need 0 <= nu < 1 and batch_size > 0, got {nu}, {batch_size}")));
    }
    let mut xi = vec![0.0; theta.num_layers()];
    let idx: Vec<usize> = (0..worker_test.len()).collect();
    for _ in 0..eval_epochs {
        for chunk in idx.chunks(batch_size) {
            let batch = worker_test.subset(chunk);
            let (logits, cache) = forward(theta, batch.features.view())?;
            let (_, d_logits) = cross_entropy(logits.view(), &batch.labels);
            let grads = backward(theta, &cache, d_logits.view())?;
            for (x, g) in xi.iter_mut().zip(per_layer_grad_norm_sq(&grads)) {
                *x = nu * *x + (1.0 - nu) * g;
            }
        }
    }
    Ok(xi)
}

/// Sample-size-weighted mean of worker coefficients, per layer.
pub fn aggregate_coefficients(coeffs: &[LayerCoefficients]) -> Result<Vec<f64>> {
    let first = coeffs.first().ok_or(Error::EmptyWorkerSet)?;
    let layers = first.xi.len();
    if coeffs.iter().any(|c| c.xi.len() != layers) {
        return Err(Error::ShapeMismatch("workers disagree on layer count".into()));
    }
    let total: usize = coeffs.iter().map(|c| c.sample_count).sum();
    if total == 0 {
        return Err(Error::EmptyWorkerSet);
    }
    let mut sorted: Vec<&LayerCoefficients> = coeffs.iter().collect();
    sorted.sort_by_key(|c| c.worker_id);
    let mut lambda = vec![0.0; layers];
    for c in sorted {
        let w = c.sample_count as f64 / total as f64;
        for (l, x) in lambda.iter_mut().zip(&c.xi) {
            *l += w * x;
        }
    }
    Ok(lambda)
}

/// Prediction, true-positive and target counts of `theta` on `worker_test`.
pub fn compute_class_stats(theta: &ParamSet, worker_test: &LabeledDataset, worker_id: usize, client_id: usize) -> Result<ClassStats> {
    let m = worker_test.num_classes;
    let mut stats = ClassStats {
        predicted: vec![0; m],
        true_positive: vec![0; m],
        target: vec![0; m],
        worker_id,
        client_id,
    };
    if worker_test.is_empty() {
        return Ok(stats);
    }
    let (logits, _) = forward(theta, worker_test.features.view())?;
    if logits.ncols() != m {
        return Err(Error::ShapeMismatch(format!("model emits {} classes, data has {m}", logits.ncols())));
    }
    for (row, &label) in logits.rows().into_iter().zip(&worker_test.labels) {
        let pred = argmax(row.as_slice().expect("row-major logits"));
        stats.predicted[pred] += 1;
        stats.target[label] += 1;
        if pred == label {
            stats.true_positive[label] += 1;
        }
    }
    Ok(stats)
}

/// Everything one worker reports back about one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub coefficients: LayerCoefficients,
    pub stats: ClassStats,
}

pub fn evaluate(theta: &ParamSet, worker_test: &LabeledDataset, worker_id: usize, client_id: usize, cfg: &WorkerConfig) -> Result<WorkerReport> {
    let xi = compute_layer_coefficients(theta, worker_test, cfg.nu, cfg.eval_epochs, cfg.batch_size)?;
    Ok(WorkerReport {
        coefficients: LayerCoefficients {
            xi,
            worker_id,
            sample_count: worker_test.len(),
        },
        stats: compute_class_stats(theta, worker_test, worker_id, client_id)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_mlp, Activation, Layer, Tensors};
    use ndarray::{array, Array1, Array2};

    fn linear(weight: Array2<f64>, bias: Array1<f64>) -> ParamSet {
        ParamSet::new(Activation::Elu, Tensors { layers: vec![Layer { weight, bias }] }).unwrap()
    }

    #[test]
    fn single_ema_step_from_zero() {
        // zero 1x2 linear model, one sample x with label 1: softmax [0.5, 0.5],
        // so |dW|^2 + |db|^2 = 0.5 x^2 + 0.5, which is 2.0 at x = sqrt(3)
        let p = linear(array![[0.0, 0.0]], array![0.0, 0.0]);
        let data = LabeledDataset::new(array![[3f64.sqrt()]], vec![1], 2).unwrap();
        let xi = compute_layer_coefficients(&p, &data, 0.95, 1, 32).unwrap();
        assert!((xi[0] - 0.1).abs() < 1e-12);
        assert_eq!(compute_layer_coefficients(&p, &data, 0.95, 0, 32).unwrap(), vec![0.0]);
    }

    #[test]
    fn ema_converges_to_constant_norm() {
        let p = linear(array![[0.0, 0.0]], array![0.0, 0.0]);
        let data = LabeledDataset::new(Array2::from_elem((200, 1), 1.0), vec![0; 200], 2).unwrap();
        let xi = compute_layer_coefficients(&p, &data, 0.9, 1, 1).unwrap();
        let v = 0.5 + 0.5;
        assert!((xi[0] - v).abs() < 1e-8);
    }

    #[test]
    fn saturated_model_has_zero_coefficients() {
        let p = linear(array![[0.0, 0.0]], array![1e4, 0.0]);
        let data = LabeledDataset::new(array![[1.0], [0.5]], vec![0, 0], 2).unwrap();
        let xi = compute_layer_coefficients(&p, &data, 0.95, 3, 1).unwrap();
        assert_eq!(xi, vec![0.0]);
        assert!(matches!(
            compute_layer_coefficients(&p, &LabeledDataset::empty(1, 2), 0.95, 1, 1),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn aggregation_examples() {
        let c = |id, n, xi: Vec<f64>| LayerCoefficients { xi, worker_id: id, sample_count: n };
        assert_eq!(aggregate_coefficients(&[c(0, 7, vec![1.5, 2.0])]).unwrap(), vec![1.5, 2.0]);
        let two = aggregate_coefficients(&[c(0, 10, vec![1.0]), c(1, 30, vec![3.0])]).unwrap();
        assert!((two[0] - 2.5).abs() < 1e-15);
        let same = aggregate_coefficients(&[c(0, 3, vec![0.4, 0.9]), c(1, 9, vec![0.4, 0.9])]).unwrap();
        assert!((same[0] - 0.4).abs() < 1e-15 && (same[1] - 0.9).abs() < 1e-15);
        assert!(matches!(aggregate_coefficients(&[]), Err(Error::EmptyWorkerSet)));
        let swapped = aggregate_coefficients(&[c(1, 30, vec![3.0]), c(0, 10, vec![1.0])]).unwrap();
        assert_eq!(swapped, two);
    }

    #[test]
    fn class_stats_examples() {
        // perfect classifier: logit = x for a 2-feature one-hot input
        let perfect = linear(Array2::eye(2), Array1::zeros(2));
        let x = Array2::from_shape_fn((10, 2), |(i, j)| if (i % 2) == j { 1.0 } else { 0.0 });
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let data = LabeledDataset::new(x, labels, 2).unwrap();
        let s = compute_class_stats(&perfect, &data, 1, 2).unwrap();
        assert_eq!(s.predicted, vec![5, 5]);
        assert_eq!(s.true_positive, vec![5, 5]);
        assert_eq!(s.target, vec![5, 5]);

        let constant = linear(Array2::zeros((2, 2)), array![1.0, 0.0]);
        let data = LabeledDataset::new(Array2::zeros((4, 2)), vec![0, 0, 1, 1], 2).unwrap();
        let s = compute_class_stats(&constant, &data, 0, 0).unwrap();
        assert_eq!(s.predicted, vec![4, 0]);
        assert_eq!(s.true_positive, vec![2, 0]);
        assert_eq!(s.target, vec![2, 2]);
        assert!(s.is_consistent());
    }

    #[test]
    fn class_stats_match_per_sample_loop() {
        let p = init_mlp(&[3, 5, 4], Activation::Tanh, 8).unwrap();
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let labels: Vec<usize> = (0..20).map(|i| (i * 3) % 4).collect();
        let data = LabeledDataset::new(x.clone(), labels.clone(), 4).unwrap();
        let s = compute_class_stats(&p, &data, 0, 0).unwrap();
        let (mut z, mut tp, mut t) = (vec![0u64; 4], vec![0u64; 4], vec![0u64; 4]);
        for i in 0..20 {
            let one = LabeledDataset::new(x.slice(ndarray::s![i..i + 1, ..]).to_owned(), vec![labels[i]], 4).unwrap();
            let (logits, _) = forward(&p, one.features.view()).unwrap();
            let row: Vec<f64> = logits.row(0).to_vec();
            let mut best = 0;
            for k in 1..4 {
                if row[k] > row[best] {
                    best = k;
                }
            }
            z[best] += 1;
            t[labels[i]] += 1;
            if best == labels[i] {
                tp[best] += 1;
            }
        }
        assert_eq!((s.predicted, s.true_positive, s.target), (z, tp, t));
    }
}
