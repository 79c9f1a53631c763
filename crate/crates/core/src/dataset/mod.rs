//! Labeled datasets, IDX ingestion, synthetic data and non-IID partitioning.

mod idx;
mod partition;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use idx::{load_idx, write_idx};
pub use partition::{partition, PartitionMode, PartitionSpec};
pub use synthetic::gen_synthetic;

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stacks datasets with matching dimension and class count.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let (dim, m) = (first.dim(), first.num_classes);
        if parts.iter().any(|p| p.dim() != dim || p.num_classes != m) {
            return Err(Error::ShapeMismatch("datasets disagree on dim or classes".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Ok(Self {
            features,
            labels,
            num_classes: m,
        })
    }
}

/// One client's local data. `train_indices`/`test_indices` point back into the
/// dataset that was partitioned.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub class_counts: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl ClientShard {
    pub fn manifest(&self) -> ShardManifest {
        ShardManifest {
            client_id: self.client_id,
            class_counts: self.class_counts.clone(),
            train_size: self.train.len(),
            test_size: self.test.len(),
        }
    }

    /// Number of classes with at least one training sample.
    pub fn distinct_classes(&self) -> usize {
        self.class_counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub client_id: usize,
    pub class_counts: Vec<usize>,
    pub train_size: usize,
    pub test_size: usize,
}
