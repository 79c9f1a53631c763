use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, CvUpdateRule};
use crate::client::{CvEstimator, LocalTrainConfig};
use crate::dataset::PartitionSpec;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::worker::WorkerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FedSat,
    FedAvg,
    Scaffold,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FedSat => "fedsat",
            Method::FedAvg => "fedavg",
            Method::Scaffold => "scaffold",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedsat" => Ok(Method::FedSat),
            "fedavg" => Ok(Method::FedAvg),
            "scaffold" => Ok(Method::Scaffold),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// IDX image/label files, optionally gzipped. Without test files the
    /// server evaluates on the union of the client test shards.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
        /// Keep a seeded random subset of this many training samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Switches that collapse the prioritized method onto SCAFFOLD.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedSatOverrides {
    /// Train with an all-ones cost matrix.
    pub unit_costs: bool,
    /// Replace the worker layer coefficients with zeros.
    pub zero_layer_coefficients: bool,
    /// Aggregate every client that returned an update.
    pub full_aggregation_set: bool,
    /// Equal aggregation weights over the aggregation set.
    pub uniform_weights: bool,
}

impl FedSatOverrides {
    pub fn all() -> Self {
        Self {
            unit_costs: true,
            zero_layer_coefficients: true,
            full_aggregation_set: true,
            uniform_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write measured round times; off keeps metrics files reproducible.
    pub record_wall_time: bool,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            record_wall_time: false,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub dataset: DatasetSource,
    /// `partition.seed` is mixed with `master_seed`.
    pub partition: PartitionSpec,
    pub model: ModelConfig,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub workers_per_client: usize,
    #[serde(default)]
    pub local: LocalTrainConfig,
    #[serde(default)]
    pub worker: WorkerConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub overrides: FedSatOverrides,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_threads() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative dataset and output paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            fix(images);
            fix(labels);
            test_images.iter_mut().for_each(fix);
            test_labels.iter_mut().for_each(fix);
        }
        self.output.dir.iter_mut().for_each(fix);
    }

    pub fn total_clients(&self) -> usize {
        self.partition.clients
    }

    /// Settings under which the prioritized method performs SCAFFOLD's
    /// arithmetic exactly.
    pub fn into_scaffold_reduction(mut self) -> Self {
        self.method = Method::FedSat;
        self.overrides = FedSatOverrides::all();
        self.aggregation.psi = 0.0;
        self.aggregation.cv_update = CvUpdateRule::MeanChange;
        self.local.cv_estimator = CvEstimator::ScaffoldDelta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.clients_per_round == 0 {
            return bad("clients_per_round must be at least 1".into());
        }
        if self.method == Method::FedSat && self.workers_per_client == 0 {
            return bad("fedsat needs at least one worker per client".into());
        }
        let needed = self.clients_per_round * (1 + self.workers_per_client);
        if needed > self.total_clients() {
            return Err(Error::WorkerPoolExhausted {
                needed,
                available: self.total_clients(),
            });
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if self.model.layer_sizes.len() < 2 || self.model.layer_sizes.contains(&0) {
            return bad(format!("bad layer sizes {:?}", self.model.layer_sizes));
        }
        if !(self.worker.nu >= 0.0 && self.worker.nu < 1.0) || self.worker.batch_size == 0 {
            return bad(format!("bad worker settings {:?}", self.worker));
        }
        if let DatasetSource::Mnist { test_images, test_labels, .. } = &self.dataset {
            if test_images.is_some() != test_labels.is_some() {
                return bad("test_images and test_labels must be given together".into());
            }
        }
        self.local.validate()?;
        self.aggregation.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PartitionMode;

    const MINIMAL: &str = r#"{
        "method": "fedsat",
        "dataset": {"kind": "synthetic", "classes": 3, "dim": 4, "per_class": 20},
        "partition": {"mode": "LSMC", "clients": 9},
        "model": {"layer_sizes": [4, 8, 3]},
        "rounds": 2,
        "clients_per_round": 3,
        "workers_per_client": 2
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.partition.mode, PartitionMode::Lsmc);
        assert_eq!(cfg.partition.classes_per_client, 2);
        assert_eq!(cfg.local, LocalTrainConfig::default());
        assert_eq!(cfg.aggregation, AggregationConfig::default());
        assert_eq!(cfg.threads, 1);
        assert!(!cfg.output.record_wall_time);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn worker_pool_must_fit() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.partition.clients = 8;
        assert!(matches!(cfg.validate(), Err(Error::WorkerPoolExhausted { needed: 9, available: 8 })));
    }

    #[test]
    fn rejects_unknown_fields_in_method() {
        let text = MINIMAL.replace("\"fedsat\"", "\"fedprox\"");
        assert!(RunConfig::from_json(&text).is_err());
        assert_eq!("scaffold".parse::<Method>().unwrap(), Method::Scaffold);
        assert!("x".parse::<Method>().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.dataset = DatasetSource::Mnist {
            images: "a.gz".into(),
            labels: "/abs/b.gz".into(),
            test_images: None,
            test_labels: None,
            limit: None,
        };
        cfg.resolve_paths(Path::new("/cfg"));
        match cfg.dataset {
            DatasetSource::Mnist { images, labels, .. } => {
                assert_eq!(images, PathBuf::from("/cfg/a.gz"));
                assert_eq!(labels, PathBuf::from("/abs/b.gz"));
            }
            _ => unreachable!(),
        }
    }
}
