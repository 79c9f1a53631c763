use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Misclassification costs indexed `[true][predicted]`. The diagonal is 1 and
/// every off-diagonal entry is at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        let (r, c) = costs.dim();
        if r != c || r == 0 {
            return Err(Error::ShapeMismatch(format!("cost matrix must be square, got {r}x{c}")));
        }
        for ((i, j), &v) in costs.indexed_iter() {
            let ok = if i == j { v == 1.0 } else { v.is_finite() && v >= 1.0 };
            if !ok {
                return Err(Error::InvalidArgument(format!("cost[{i}][{j}] = {v} violates the cost bounds")));
            }
        }
        Ok(Self(costs))
    }

    pub fn unit(m: usize) -> Self {
        Self(Array2::ones((m, m)))
    }

    pub fn num_classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.0[[truth, predicted]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean over the batch of `weight(label, prediction) * -log softmax[label]`.
/// The weight is a constant in the gradient.
fn weighted_ce(logits: ArrayView2<f64>, labels: &[usize], weight: impl Fn(usize, usize) -> f64) -> (f64, Array2<f64>) {
    let (n, m) = logits.dim();
    assert_eq!(n, labels.len(), "one label per logit row");
    let mut grad = Array2::zeros((n, m));
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let label = labels[i];
        assert!(label < m, "label {label} outside [0, {m})");
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut pred = 0;
        let mut sum = 0.0;
        for (j, &z) in row.iter().enumerate() {
            if z > row[pred] {
                pred = j;
            }
            sum += (z - max).exp();
        }
        let log_z = max + sum.ln();
        let w = weight(label, pred);
        total += w * (log_z - row[label]);
        let mut g = grad.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            g[j] = w * (p - target) * inv_n;
        }
    }
    (total * inv_n, grad)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    weighted_ce(logits, labels, |_, _| 1.0)
}

/// Cross-entropy where each sample is scaled by `costs[label][argmax(logits)]`.
pub fn cost_sensitive_loss(logits: ArrayView2<f64>, labels: &[usize], costs: &CostMatrix) -> (f64, Array2<f64>) {
    assert_eq!(costs.num_classes(), logits.ncols(), "cost matrix size differs from class count");
    weighted_ce(logits, labels, |t, p| costs.get(t, p))
}
