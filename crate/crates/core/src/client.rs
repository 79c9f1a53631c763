//! Client-side local training: cost matrices from local class frequencies,
//! drift-corrected SGD and the control-variate update.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{backward, cost_sensitive_loss, cross_entropy, forward, sgd_step, ControlVariate, CostMatrix, GradSet, ParamSet, Tensors};
use crate::rng::Stream;

/// How a client estimates its new control variate after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvEstimator {
    /// `c_k - c + g / (B * lr)` with `g` the mean cost-sensitive gradient at
    /// the final local parameters.
    #[default]
    AsWritten,
    /// `c_k - c + (global - local) / (steps * lr)`.
    ScaffoldDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_c_max")]
    pub c_max: f64,
    #[serde(default)]
    pub cv_estimator: CvEstimator,
}

fn default_c_max() -> f64 {
    10.0
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 5,
            batch_size: 16,
            c_max: default_c_max(),
            cv_estimator: CvEstimator::AsWritten,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("local lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.c_max > 1.0) {
            return Err(Error::InvalidArgument(format!("c_max must exceed 1, got {}", self.c_max)));
        }
        Ok(())
    }

    /// SGD steps taken over `train_size` samples.
    pub fn steps(&self, train_size: usize) -> usize {
        self.epochs * train_size.div_ceil(self.batch_size)
    }
}

/// Loss minimised during local training.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    CrossEntropy,
    CostSensitive(CostMatrix),
}

impl Objective {
    fn loss_grad(&self, params: &ParamSet, batch: &LabeledDataset) -> Result<GradSet> {
        let (logits, cache) = forward(params, batch.features.view())?;
        let (_, d_logits) = match self {
            Objective::CrossEntropy => cross_entropy(logits.view(), &batch.labels),
            Objective::CostSensitive(costs) => cost_sensitive_loss(logits.view(), &batch.labels, costs),
        };
        backward(params, &cache, d_logits.view())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub theta: ParamSet,
    pub new_cv: ControlVariate,
    pub train_size: usize,
    pub class_counts: Vec<usize>,
}

/// Costs grow with how rare the true class is locally:
/// `cs[i][j] = clamp(max_count / max(1, count_i), 1, c_max)` off the diagonal.
pub fn build_cost_matrix(class_counts: &[usize], c_max: f64) -> Result<CostMatrix> {
    if !(c_max > 1.0) {
        return Err(Error::InvalidArgument(format!("c_max must exceed 1, got {c_max}")));
    }
    let max_present = class_counts.iter().copied().max().unwrap_or(0);
    if max_present == 0 {
        return Err(Error::AllEmpty);
    }
    let m = class_counts.len();
    let costs = ndarray::Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            1.0
        } else {
            (max_present as f64 / class_counts[i].max(1) as f64).clamp(1.0, c_max)
        }
    });
    CostMatrix::new(costs)
}

/// The objective a FedSat client optimises: cost-sensitive loss with costs
/// from its own class counts.
pub fn client_objective(shard: &ClientShard, cfg: &LocalTrainConfig) -> Result<Objective> {
    Ok(Objective::CostSensitive(build_cost_matrix(&shard.class_counts, cfg.c_max)?))
}

/// Runs `cfg.epochs` of shuffled mini-batch SGD from `start`, adding
/// `correction` to every gradient. The last short batch is kept.
pub fn local_sgd(
    start: &ParamSet,
    correction: Option<&Tensors>,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    objective: &Objective,
    rng: &mut Stream,
) -> Result<ParamSet> {
    let n = shard.train.len();
    if n == 0 {
        return Err(Error::EmptyShard(shard.client_id));
    }
    let mut theta = start.clone();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = shard.train.subset(chunk);
            let grads = objective.loss_grad(&theta, &batch)?;
            let next = sgd_step(&theta.tensors, &grads, cfg.lr, correction)?;
            if !next.is_finite() {
                return Err(Error::NonFiniteUpdate(shard.client_id));
            }
            theta.tensors = next;
        }
    }
    Ok(theta)
}

/// Mean gradient of `objective` over the whole training set.
pub fn full_gradient(params: &ParamSet, data: &LabeledDataset, objective: &Objective, chunk: usize) -> Result<GradSet> {
    let n = data.len();
    let mut total = Tensors::zeros_like(&params.tensors);
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk.max(1)) {
        let batch = data.subset(part);
        // per-batch means re-weighted into a full-set mean
        let g = objective.loss_grad(params, &batch)?;
        total.axpy(part.len() as f64 / n as f64, &g)?;
    }
    Ok(total)
}

/// New client control variate after local training ends at `theta_final`.
pub fn update_control_variate(
    client_cv: &ControlVariate,
    global_cv: &ControlVariate,
    global_theta: &ParamSet,
    theta_final: &ParamSet,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    objective: &Objective,
) -> Result<ControlVariate> {
    let mut cv = client_cv.sub(global_cv)?;
    match cfg.cv_estimator {
        CvEstimator::AsWritten => {
            let g = full_gradient(theta_final, &shard.train, objective, cfg.batch_size.max(256))?;
            cv.axpy(1.0 / (cfg.batch_size as f64 * cfg.lr), &g)?;
        }
        CvEstimator::ScaffoldDelta => {
            let steps = cfg.steps(shard.train.len());
            if steps > 0 {
                let delta = global_theta.tensors.sub(&theta_final.tensors)?;
                cv.axpy(1.0 / (steps as f64 * cfg.lr), &delta)?;
            }
        }
    }
    Ok(cv)
}

/// One client's round: start from the global model, train with the drift
/// correction `global_cv - client_cv`, then refresh the control variate.
pub fn local_train(
    global_theta: &ParamSet,
    global_cv: &ControlVariate,
    client_cv: &ControlVariate,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    objective: &Objective,
    rng: &mut Stream,
) -> Result<ClientUpdate> {
    let correction = global_cv.sub(client_cv)?;
    let theta = local_sgd(global_theta, Some(&correction), shard, cfg, objective, rng)?;
    let new_cv = update_control_variate(client_cv, global_cv, global_theta, &theta, shard, cfg, objective)?;
    if !new_cv.is_finite() {
        return Err(Error::NonFiniteUpdate(shard.client_id));
    }
    Ok(ClientUpdate {
        client_id: shard.client_id,
        theta,
        new_cv,
        train_size: shard.train.len(),
        class_counts: shard.class_counts.clone(),
    })
}

/// Mean loss of `objective` over `data`, for diagnostics.
pub fn mean_loss(params: &ParamSet, data: &LabeledDataset, objective: &Objective) -> Result<f64> {
    let (logits, _) = forward(params, data.features.view())?;
    let (loss, _) = match objective {
        Objective::CrossEntropy => cross_entropy(logits.view(), &data.labels),
        Objective::CostSensitive(c) => cost_sensitive_loss(logits.view(), &data.labels, c),
    };
    Ok(loss)
}
