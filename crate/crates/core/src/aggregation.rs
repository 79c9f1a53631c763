//! Server-side statistical weight computation and the prioritized, weighted
//! global update.
//!
//! Per client, worker class counts are pooled into false-negative,
//! false-positive and accuracy rates. The rates become per-class
//! prioritization scores; the class with the largest score summed over
//! clients is the round's priority class. Clients whose total score reaches
//! `sigma` times the mean are aggregated, each weighted by its accuracy, its
//! true positives (overall and on the priority class) and its errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ControlVariate, ParamSet, Tensors};
use crate::worker::ClassStats;

/// Floor for score and coefficient denominators.
pub const SCORE_EPS: f64 = 1e-9;

/// How the server moves the global control variate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CvUpdateRule {
    /// `c - (|A| / |K|) * sum(weight * c_k)` over the aggregation set.
    #[default]
    AsWritten,
    /// `c + sum(c_k_new - c_k_old) / |K|` over every client that trained.
    MeanChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_psi")]
    pub psi: f64,
    #[serde(default = "d_eta_g")]
    pub eta_g: f64,
    #[serde(default = "d_true")]
    pub normalize_weights: bool,
    #[serde(default)]
    pub cv_update: CvUpdateRule,
}

fn d_alpha() -> f64 {
    0.3
}
fn d_beta() -> f64 {
    0.2
}
fn d_sigma() -> f64 {
    0.5
}
fn d_psi() -> f64 {
    0.65
}
fn d_eta_g() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            alpha: d_alpha(),
            beta: d_beta(),
            sigma: d_sigma(),
            psi: d_psi(),
            eta_g: d_eta_g(),
            normalize_weights: true,
            cv_update: CvUpdateRule::AsWritten,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0 && self.beta >= 0.0 && self.sigma > 0.0 && self.eta_g > 0.0 && self.psi >= 0.0;
        let finite = [self.alpha, self.beta, self.sigma, self.psi, self.eta_g].iter().all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("aggregation parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub client_id: usize,
    pub fnr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub acc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityReport {
    pub scores: BTreeMap<usize, Vec<f64>>,
    pub priority_class: usize,
    pub aggregation_set: Vec<usize>,
    pub weights: BTreeMap<usize, f64>,
    pub rates: BTreeMap<usize, RateReport>,
}

/// Worker counts for one client, summed per class.
#[derive(Debug, Clone, PartialEq)]
struct Pooled {
    predicted: Vec<u64>,
    true_positive: Vec<u64>,
    target: Vec<u64>,
    total: u64,
}

fn pool(stats: &[ClassStats]) -> Result<Pooled> {
    let first = stats
        .first()
        .ok_or_else(|| Error::InvalidArgument("no worker statistics for client".into()))?;
    let m = first.num_classes();
    let mut p = Pooled {
        predicted: vec![0; m],
        true_positive: vec![0; m],
        target: vec![0; m],
        total: 0,
    };
    for s in stats {
        for len in [s.predicted.len(), s.true_positive.len(), s.target.len()] {
            if len != m {
                return Err(Error::InconsistentClassCount { expected: m, found: len });
            }
        }
        for i in 0..m {
            p.predicted[i] += s.predicted[i];
            p.true_positive[i] += s.true_positive[i];
            p.target[i] += s.target[i];
        }
        p.total += s.total();
    }
    Ok(p)
}

/// Pooled FNR, FPR and accuracy per class with count denominators floored at 1.
pub fn compute_rates(stats: &[ClassStats]) -> Result<RateReport> {
    let p = pool(stats)?;
    let m = p.target.len();
    let ratio = |num: u64, den: u64| num as f64 / den.max(1) as f64;
    Ok(RateReport {
        client_id: stats[0].client_id,
        fnr: (0..m).map(|i| ratio(p.target[i] - p.true_positive[i], p.true_positive[i])).collect(),
        fpr: (0..m)
            .map(|i| ratio(p.predicted[i] - p.true_positive[i], p.total - p.target[i]))
            .collect(),
        acc: (0..m).map(|i| ratio(p.true_positive[i], p.target[i])).collect(),
    })
}

/// `alpha * fnr / max(fnr) + beta * fpr / max(fpr)`, each normalised term
/// taken as 0 when its maximum is 0.
pub fn prioritization_scores(rates: &RateReport, alpha: f64, beta: f64) -> Vec<f64> {
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let (max_fnr, max_fpr) = (max_of(&rates.fnr), max_of(&rates.fpr));
    let norm = |v: f64, max: f64| if max > 0.0 { v / max } else { 0.0 };
    rates
        .fnr
        .iter()
        .zip(&rates.fpr)
        .map(|(&n, &p)| alpha * norm(n, max_fnr) + beta * norm(p, max_fpr))
        .collect()
}

/// Class with the largest client-summed score (lowest index on ties).
pub fn select_priority_class(scores: &BTreeMap<usize, Vec<f64>>) -> usize {
    let m = scores.values().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![0.0; m];
    for s in scores.values() {
        for (acc, v) in sums.iter_mut().zip(s) {
            *acc += v;
        }
    }
    crate::nn::argmax(&sums)
}

/// Clients whose total score reaches `sigma / |S| * (sum of all totals)`.
/// Falls back to every client when none qualifies.
pub fn select_aggregation_set(scores: &BTreeMap<usize, Vec<f64>>, sigma: f64) -> Vec<usize> {
    let totals: BTreeMap<usize, f64> = scores.iter().map(|(&k, s)| (k, s.iter().sum())).collect();
    let grand: f64 = totals.values().sum();
    let threshold = sigma / scores.len().max(1) as f64 * grand;
    let chosen: Vec<usize> = totals
        .iter()
        .filter(|(_, &t)| t > 0.0 && t >= threshold)
        .map(|(&k, _)| k)
        .collect();
    if chosen.is_empty() {
        scores.keys().copied().collect()
    } else {
        chosen
    }
}

/// Raw aggregation weight of one client.
pub fn raw_weight(rates: &RateReport, stats: &[ClassStats], scores: &[f64], priority_class: usize) -> Result<f64> {
    let p = pool(stats)?;
    let sum_acc: f64 = rates.acc.iter().sum();
    let sum_tp: u64 = p.true_positive.iter().sum();
    let sum_t: u64 = p.target.iter().sum();
    let sum_score: f64 = scores.iter().sum();
    let tp_pc = p.true_positive.get(priority_class).copied().unwrap_or(0);
    let errors = (sum_t - sum_tp).max(1);
    Ok(sum_acc * sum_tp as f64 / sum_score.max(SCORE_EPS) * (tp_pc.max(1) as f64 / errors as f64))
}

/// Weights for the clients in `aggregation_set`, optionally normalised to sum
/// to one. An all-zero raw set normalises to uniform weights.
pub fn aggregation_weights(
    rates: &BTreeMap<usize, RateReport>,
    stats: &BTreeMap<usize, Vec<ClassStats>>,
    scores: &BTreeMap<usize, Vec<f64>>,
    priority_class: usize,
    aggregation_set: &[usize],
    normalize: bool,
) -> Result<BTreeMap<usize, f64>> {
    if aggregation_set.is_empty() {
        return Err(Error::InvalidArgument("empty aggregation set".into()));
    }
    let missing = |k: usize| Error::InvalidArgument(format!("no statistics for client {k}"));
    let mut weights = BTreeMap::new();
    for &k in aggregation_set {
        let w = raw_weight(
            rates.get(&k).ok_or_else(|| missing(k))?,
            stats.get(&k).ok_or_else(|| missing(k))?,
            scores.get(&k).ok_or_else(|| missing(k))?,
            priority_class,
        )?;
        weights.insert(k, w);
    }
    if normalize {
        let total: f64 = weights.values().sum();
        let n = weights.len() as f64;
        for w in weights.values_mut() {
            *w = if total > 0.0 { *w / total } else { 1.0 / n };
        }
    }
    Ok(weights)
}

/// Runs the full weight computation for one round.
pub fn compute_statistical_weights(stats: &BTreeMap<usize, Vec<ClassStats>>, cfg: &AggregationConfig) -> Result<PriorityReport> {
    if stats.is_empty() {
        return Err(Error::InvalidArgument("no client statistics".into()));
    }
    let expected = stats.values().flatten().map(ClassStats::num_classes).next().unwrap_or(0);
    let mut rates = BTreeMap::new();
    for (&k, s) in stats {
        let r = compute_rates(s)?;
        if r.acc.len() != expected {
            return Err(Error::InconsistentClassCount { expected, found: r.acc.len() });
        }
        rates.insert(k, RateReport { client_id: k, ..r });
    }
    let scores: BTreeMap<usize, Vec<f64>> = rates
        .iter()
        .map(|(&k, r)| (k, prioritization_scores(r, cfg.alpha, cfg.beta)))
        .collect();
    let priority_class = select_priority_class(&scores);
    let aggregation_set = select_aggregation_set(&scores, cfg.sigma);
    let weights = aggregation_weights(&rates, stats, &scores, priority_class, &aggregation_set, cfg.normalize_weights)?;
    Ok(PriorityReport {
        scores,
        priority_class,
        aggregation_set,
        weights,
        rates,
    })
}

/// Per-layer factor `1 + psi - lambda[i] / max(lambda)`.
pub fn layer_scale_factors(lambda: &[f64], psi: f64) -> Vec<f64> {
    let max = lambda.iter().copied().fold(0.0, f64::max).max(SCORE_EPS);
    lambda.iter().map(|&l| 1.0 + psi - l / max).collect()
}

/// Coefficient-scaled pseudo-gradient: layer `i` of `global - client` times
/// its scale factor.
pub fn fine_tune_gradients(global: &ParamSet, client: &ParamSet, lambda: &[f64], psi: f64) -> Result<Tensors> {
    if lambda.len() != global.num_layers() {
        return Err(Error::ShapeMismatch(format!(
            "{} layer coefficients for {} layers",
            lambda.len(),
            global.num_layers()
        )));
    }
    let mut phi = global.tensors.sub(&client.tensors)?;
    for (layer, f) in phi.layers.iter_mut().zip(layer_scale_factors(lambda, psi)) {
        layer.weight.mapv_inplace(|v| f * v);
        layer.bias.mapv_inplace(|v| f * v);
    }
    Ok(phi)
}

/// `global - eta_g * sum(weight * phi)`.
pub fn global_update(global: &ParamSet, contributions: &[(f64, Tensors)], eta_g: f64) -> Result<ParamSet> {
    let mut step = Tensors::zeros_like(&global.tensors);
    for (w, phi) in contributions {
        step.axpy(*w, phi)?;
    }
    let mut next = global.tensors.clone();
    next.axpy(-eta_g, &step)?;
    global.with_tensors(next)
}

/// `c - (|A| / |K|) * sum(weight * c_k)`.
pub fn global_cv_update(
    global_cv: &ControlVariate,
    client_cvs: &[(f64, ControlVariate)],
    aggregated: usize,
    total_clients: usize,
) -> Result<ControlVariate> {
    if total_clients == 0 {
        return Err(Error::InvalidArgument("total client count is zero".into()));
    }
    let mut sum = Tensors::zeros_like(global_cv);
    for (w, c) in client_cvs {
        sum.axpy(*w, c)?;
    }
    let mut next = global_cv.clone();
    next.axpy(-(aggregated as f64 / total_clients as f64), &sum)?;
    Ok(next)
}
