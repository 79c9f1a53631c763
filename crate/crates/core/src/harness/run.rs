use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use super::config::{DatasetSource, Method, RunConfig};
use super::metrics::{emit_metrics, MetricsRecord, RoundLog, CHECKPOINT_FILE};
use super::plan::{plan_round, RoundPlan};
use crate::aggregation::{
    aggregation_weights, compute_statistical_weights, CvUpdateRule, fine_tune_gradients, global_cv_update, global_update, PriorityReport,
};
use crate::baselines::{client_stream, fedavg_round, scaffold_cv_update, scaffold_round, split_outcomes, zero_cvs, Exclusion};
use crate::client::{client_objective, local_train, ClientUpdate, Objective};
use crate::dataset::{gen_synthetic, load_idx, partition, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{init_mlp, save_checkpoint, ControlVariate, CostMatrix, ParamSet};
use crate::rng::{derive_seed, stream, Role};
use crate::worker::{aggregate_coefficients, compute_class_stats, evaluate, WorkerReport};

/// Client shards plus the server-held test set.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub shards: Vec<ClientShard>,
    pub test: LabeledDataset,
}

impl PreparedData {
    pub fn num_classes(&self) -> usize {
        self.test.num_classes
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub logs: Vec<RoundLog>,
    pub best_round: usize,
    pub best_accuracy: f64,
    pub best_model: ParamSet,
    pub final_model: ParamSet,
    pub num_classes: usize,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.global_acc)
    }
}

fn load_source(cfg: &RunConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    match &cfg.dataset {
        DatasetSource::Mnist {
            images,
            labels,
            test_images,
            test_labels,
            limit,
        } => {
            let mut train = load_idx(images, labels)?;
            if let Some(limit) = *limit {
                if limit < train.len() {
                    let mut rng = stream(cfg.master_seed, Role::Subsample, 0, 0);
                    let mut keep = index::sample(&mut rng, train.len(), limit).into_vec();
                    keep.sort_unstable();
                    train = train.subset(&keep);
                }
            }
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l)?),
                _ => None,
            };
            Ok((train, test))
        }
        DatasetSource::Synthetic {
            classes,
            dim,
            per_class,
            spread,
        } => Ok((gen_synthetic(*classes, *dim, *per_class, *spread, cfg.master_seed)?, None)),
    }
}

/// Loads and partitions the configured dataset. Without dedicated test files
/// the server test set is the union of all client test shards.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let (train, test) = load_source(cfg)?;
    let mut spec = cfg.partition.clone();
    spec.seed = derive_seed(cfg.master_seed, Role::Partition, 0, spec.seed);
    let shards = partition(&train, &spec)?;
    let test = match test {
        Some(t) => t,
        None => LabeledDataset::concat(&shards.iter().map(|s| &s.test).collect::<Vec<_>>())?,
    };
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(PreparedData { shards, test })
}

/// Overall and per-class accuracy; classes absent from `test` score 0.
pub fn evaluate_global(theta: &ParamSet, test: &LabeledDataset) -> Result<(f64, Vec<f64>)> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let s = compute_class_stats(theta, test, 0, 0)?;
    let per_class = s
        .true_positive
        .iter()
        .zip(&s.target)
        .map(|(&tp, &t)| if t == 0 { 0.0 } else { tp as f64 / t as f64 })
        .collect();
    let correct: u64 = s.true_positive.iter().sum();
    Ok((correct as f64 / test.len() as f64, per_class))
}

struct GlobalState {
    theta: ParamSet,
    cv: ControlVariate,
    client_cvs: Vec<ControlVariate>,
}

struct RoundOutcome {
    log: RoundLog,
}

fn empty_log(round: usize) -> RoundLog {
    RoundLog {
        round,
        priority_class: None,
        aggregation_set: vec![],
        weights: BTreeMap::new(),
        per_client_rates: BTreeMap::new(),
        scores: BTreeMap::new(),
        layer_coefficients: BTreeMap::new(),
        excluded: vec![],
    }
}

fn fedsat_step(cfg: &RunConfig, data: &PreparedData, state: &mut GlobalState, plan: &RoundPlan) -> Result<RoundOutcome> {
    let ov = &cfg.overrides;
    let m = data.num_classes();
    let outcomes: Vec<(usize, Result<ClientUpdate>)> = plan
        .clients
        .par_iter()
        .map(|&k| {
            let shard = &data.shards[k];
            let run = || {
                let objective = if ov.unit_costs {
                    Objective::CostSensitive(CostMatrix::unit(m))
                } else {
                    client_objective(shard, &cfg.local)?
                };
                let mut rng = client_stream(cfg.master_seed, plan.round, k);
                local_train(&state.theta, &state.cv, &state.client_cvs[k], shard, &cfg.local, &objective, &mut rng)
            };
            (k, run())
        })
        .collect();
    let (updates, mut excluded) = split_outcomes(outcomes)?;

    let jobs: Vec<(usize, usize)> = updates
        .iter()
        .enumerate()
        .flat_map(|(i, up)| {
            plan.workers_of(up.client_id)
                .unwrap_or(&[])
                .iter()
                .filter(|&&w| !data.shards[w].test.is_empty())
                .map(move |&w| (i, w))
        })
        .collect();
    let reports: Vec<(usize, Result<WorkerReport>)> = jobs
        .par_iter()
        .map(|&(i, w)| {
            let up = &updates[i];
            (i, evaluate(&up.theta, &data.shards[w].test, w, up.client_id, &cfg.worker))
        })
        .collect();
    let mut by_client: BTreeMap<usize, Vec<WorkerReport>> = BTreeMap::new();
    for (i, r) in reports {
        by_client.entry(i).or_default().push(r?);
    }

    let mut evaluated: BTreeMap<usize, &ClientUpdate> = BTreeMap::new();
    let mut stats = BTreeMap::new();
    let mut lambdas = BTreeMap::new();
    for (i, up) in updates.iter().enumerate() {
        let Some(reports) = by_client.remove(&i) else {
            excluded.push(Exclusion {
                client_id: up.client_id,
                reason: "no worker could evaluate the update".into(),
            });
            continue;
        };
        let lambda = if ov.zero_layer_coefficients {
            vec![0.0; state.theta.num_layers()]
        } else {
            aggregate_coefficients(&reports.iter().map(|r| r.coefficients.clone()).collect::<Vec<_>>())?
        };
        lambdas.insert(up.client_id, lambda);
        stats.insert(up.client_id, reports.into_iter().map(|r| r.stats).collect::<Vec<_>>());
        evaluated.insert(up.client_id, up);
    }

    let mut log = empty_log(plan.round);
    log.excluded = excluded;
    if evaluated.is_empty() {
        return Ok(RoundOutcome { log });
    }

    let mut report: PriorityReport = compute_statistical_weights(&stats, &cfg.aggregation)?;
    if ov.full_aggregation_set {
        report.aggregation_set = evaluated.keys().copied().collect();
        report.weights = aggregation_weights(
            &report.rates,
            &stats,
            &report.scores,
            report.priority_class,
            &report.aggregation_set,
            cfg.aggregation.normalize_weights,
        )?;
    }
    if ov.uniform_weights {
        let w = 1.0 / report.aggregation_set.len() as f64;
        report.weights = report.aggregation_set.iter().map(|&k| (k, w)).collect();
    }

    let mut contributions = Vec::with_capacity(report.aggregation_set.len());
    for &k in &report.aggregation_set {
        let phi = fine_tune_gradients(&state.theta, &evaluated[&k].theta, &lambdas[&k], cfg.aggregation.psi)?;
        contributions.push((report.weights[&k], phi));
    }
    let theta = global_update(&state.theta, &contributions, cfg.aggregation.eta_g)?;

    let cv = if cfg.aggregation.cv_update == CvUpdateRule::MeanChange {
        let deltas = evaluated
            .iter()
            .map(|(&k, up)| up.new_cv.sub(&state.client_cvs[k]))
            .collect::<Result<Vec<_>>>()?;
        scaffold_cv_update(&state.cv, &deltas, cfg.total_clients())?
    } else {
        let client_cvs: Vec<(f64, ControlVariate)> = report
            .aggregation_set
            .iter()
            .map(|&k| (report.weights[&k], evaluated[&k].new_cv.clone()))
            .collect();
        global_cv_update(&state.cv, &client_cvs, report.aggregation_set.len(), cfg.total_clients())?
    };

    for (&k, up) in &evaluated {
        state.client_cvs[k] = up.new_cv.clone();
    }
    state.theta = theta;
    state.cv = cv;

    log.priority_class = Some(report.priority_class);
    log.aggregation_set = report.aggregation_set;
    log.weights = report.weights;
    log.per_client_rates = report.rates;
    log.scores = report.scores;
    log.layer_coefficients = lambdas;
    Ok(RoundOutcome { log })
}

fn fedavg_step(cfg: &RunConfig, data: &PreparedData, state: &mut GlobalState, plan: &RoundPlan) -> Result<RoundOutcome> {
    let shards: Vec<&ClientShard> = plan.clients.iter().map(|&k| &data.shards[k]).collect();
    let r = fedavg_round(&state.theta, &shards, &cfg.local, cfg.master_seed, plan.round)?;
    let total: usize = r.updates.iter().map(|(k, _)| data.shards[*k].train.len()).sum();
    let mut log = empty_log(plan.round);
    log.aggregation_set = r.updates.iter().map(|(k, _)| *k).collect();
    log.weights = r
        .updates
        .iter()
        .map(|(k, _)| (*k, data.shards[*k].train.len() as f64 / total as f64))
        .collect();
    log.excluded = r.excluded;
    state.theta = r.theta;
    Ok(RoundOutcome { log })
}

fn scaffold_step(cfg: &RunConfig, data: &PreparedData, state: &mut GlobalState, plan: &RoundPlan) -> Result<RoundOutcome> {
    let shards: Vec<&ClientShard> = plan.clients.iter().map(|&k| &data.shards[k]).collect();
    let r = scaffold_round(
        &state.theta,
        &state.cv,
        &mut state.client_cvs,
        &shards,
        &cfg.local,
        cfg.aggregation.eta_g,
        cfg.master_seed,
        plan.round,
    )?;
    let mut log = empty_log(plan.round);
    log.aggregation_set = r.updates.iter().map(|u| u.client_id).collect();
    let w = 1.0 / log.aggregation_set.len().max(1) as f64;
    log.weights = log.aggregation_set.iter().map(|&k| (k, w)).collect();
    log.excluded = r.excluded;
    state.theta = r.theta;
    state.cv = r.global_cv;
    Ok(RoundOutcome { log })
}

/// Runs every round on already prepared data. Nothing is written to disk.
pub fn run_prepared(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput> {
    cfg.validate()?;
    if data.shards.len() != cfg.total_clients() {
        return Err(Error::InvalidArgument(format!(
            "{} shards for {} clients",
            data.shards.len(),
            cfg.total_clients()
        )));
    }
    let sizes = &cfg.model.layer_sizes;
    let m = data.num_classes();
    if sizes[0] != data.test.dim() || sizes[sizes.len() - 1] != m {
        return Err(Error::ShapeMismatch(format!(
            "model {sizes:?} for {}-dimensional data with {m} classes",
            data.test.dim()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| run_rounds(cfg, data))
}

fn run_rounds(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput> {
    let theta = init_mlp(&cfg.model.layer_sizes, cfg.model.activation, cfg.master_seed)?;
    let mut state = GlobalState {
        cv: ControlVariate::zeros_like(&theta.tensors),
        client_cvs: zero_cvs(&theta, cfg.total_clients()),
        theta,
    };
    let m = data.num_classes();
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut logs = Vec::with_capacity(cfg.rounds);
    let mut best: Option<(usize, f64, ParamSet)> = None;
    for t in 0..cfg.rounds {
        let start = Instant::now();
        let plan = plan_round(t, cfg.total_clients(), cfg.clients_per_round, cfg.workers_per_client, cfg.master_seed)?;
        let outcome = match cfg.method {
            Method::FedSat => fedsat_step(cfg, data, &mut state, &plan)?,
            Method::FedAvg => fedavg_step(cfg, data, &mut state, &plan)?,
            Method::Scaffold => scaffold_step(cfg, data, &mut state, &plan)?,
        };
        let (acc, per_class) = evaluate_global(&state.theta, &data.test)?;
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((t, acc, state.theta.clone()));
        }
        let wall_ms = if cfg.output.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        records.push(MetricsRecord {
            round: t,
            method: cfg.method,
            seed: cfg.master_seed,
            global_acc: acc,
            priority_class: outcome.log.priority_class,
            agg_set_size: outcome.log.aggregation_set.len(),
            per_class_acc: per_class,
            wall_ms,
        });
        logs.push(outcome.log);
    }
    let (best_round, best_accuracy, best_model) = best.expect("at least one round");
    Ok(RunOutput {
        records,
        logs,
        best_round,
        best_accuracy,
        best_model,
        final_model: state.theta,
        num_classes: m,
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data)
}

/// Runs and writes metrics, the round sidecar, the config echo and (when
/// enabled) the best model checkpoint into `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<RunOutput> {
    let out = run(cfg)?;
    emit_metrics(&out.records, &out.logs, cfg, out.num_classes, dir)?;
    if cfg.output.checkpoint {
        save_checkpoint(dir.join(CHECKPOINT_FILE), &out.best_model)?;
    }
    Ok(out)
}
