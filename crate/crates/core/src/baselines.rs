//! FedAvg and SCAFFOLD rounds built on the same client, model and update code
//! as the prioritized method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::global_update;
use crate::client::{local_sgd, local_train, ClientUpdate, CvEstimator, LocalTrainConfig, Objective};
use crate::dataset::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{ControlVariate, ParamSet, Tensors};
use crate::rng::{stream, Role, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    FedAvg,
    Scaffold,
}

/// Stream a client trains with in a given round.
pub fn client_stream(master_seed: u64, round: usize, client_id: usize) -> Stream {
    stream(master_seed, Role::Client, round as u64, client_id as u64)
}

/// A client dropped from a round because its update diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub client_id: usize,
    pub reason: String,
}

/// Splits per-client outcomes into kept updates and divergence exclusions.
/// Any other error aborts the round.
pub fn split_outcomes<T>(outcomes: Vec<(usize, Result<T>)>) -> Result<(Vec<T>, Vec<Exclusion>)> {
    let mut kept = Vec::with_capacity(outcomes.len());
    let mut excluded = Vec::new();
    for (client_id, r) in outcomes {
        match r {
            Ok(v) => kept.push(v),
            Err(e @ Error::NonFiniteUpdate(_)) => excluded.push(Exclusion {
                client_id,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((kept, excluded))
}

/// `c + sum(delta_k) / total_clients`.
pub fn scaffold_cv_update(global_cv: &ControlVariate, deltas: &[ControlVariate], total_clients: usize) -> Result<ControlVariate> {
    if total_clients == 0 {
        return Err(Error::InvalidArgument("total client count is zero".into()));
    }
    let w = 1.0 / total_clients as f64;
    let mut next = global_cv.clone();
    for d in deltas {
        next.axpy(w, d)?;
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedAvgRound {
    pub theta: ParamSet,
    pub updates: Vec<(usize, ParamSet)>,
    pub excluded: Vec<Exclusion>,
}

/// Plain cross-entropy SGD on every shard, then the train-size-weighted mean.
pub fn fedavg_round(
    global: &ParamSet,
    shards: &[&ClientShard],
    cfg: &LocalTrainConfig,
    master_seed: u64,
    round: usize,
) -> Result<FedAvgRound> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no clients selected".into()));
    }
    let outcomes: Vec<(usize, Result<(usize, usize, ParamSet)>)> = shards
        .par_iter()
        .map(|s| {
            let mut rng = client_stream(master_seed, round, s.client_id);
            let r = local_sgd(global, None, s, cfg, &Objective::CrossEntropy, &mut rng);
            (s.client_id, r.map(|theta| (s.client_id, s.train.len(), theta)))
        })
        .collect();
    let (kept, excluded) = split_outcomes(outcomes)?;
    let total: usize = kept.iter().map(|(_, n, _)| n).sum();
    let mut contributions = Vec::with_capacity(kept.len());
    for (_, n, theta) in &kept {
        contributions.push((*n as f64 / total as f64, global.tensors.sub(&theta.tensors)?));
    }
    let theta = global_update(global, &contributions, 1.0)?;
    Ok(FedAvgRound {
        theta,
        updates: kept.into_iter().map(|(k, _, t)| (k, t)).collect(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldRound {
    pub theta: ParamSet,
    pub global_cv: ControlVariate,
    pub updates: Vec<ClientUpdate>,
    pub excluded: Vec<Exclusion>,
}

/// Drift-corrected client training with a refreshed control variate from the
/// parameter displacement. A client that takes no steps keeps its variate.
pub fn scaffold_client(
    global: &ParamSet,
    global_cv: &ControlVariate,
    client_cv: &ControlVariate,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    objective: &Objective,
    rng: &mut Stream,
) -> Result<ClientUpdate> {
    let cfg = LocalTrainConfig {
        cv_estimator: CvEstimator::ScaffoldDelta,
        ..cfg.clone()
    };
    let mut up = local_train(global, global_cv, client_cv, shard, &cfg, objective, rng)?;
    if cfg.steps(shard.train.len()) == 0 {
        up.new_cv = client_cv.clone();
    }
    Ok(up)
}

/// One SCAFFOLD round. `client_cvs` is indexed by client id and updated in
/// place for every client that was kept.
pub fn scaffold_round(
    global: &ParamSet,
    global_cv: &ControlVariate,
    client_cvs: &mut [ControlVariate],
    shards: &[&ClientShard],
    cfg: &LocalTrainConfig,
    eta_g: f64,
    master_seed: u64,
    round: usize,
) -> Result<ScaffoldRound> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("no clients selected".into()));
    }
    for s in shards {
        if s.client_id >= client_cvs.len() {
            return Err(Error::InvalidArgument(format!("no control variate for client {}", s.client_id)));
        }
    }
    let cvs: &[ControlVariate] = client_cvs;
    let outcomes: Vec<(usize, Result<ClientUpdate>)> = shards
        .par_iter()
        .map(|s| {
            let mut rng = client_stream(master_seed, round, s.client_id);
            let r = scaffold_client(global, global_cv, &cvs[s.client_id], s, cfg, &Objective::CrossEntropy, &mut rng);
            (s.client_id, r)
        })
        .collect();
    let (updates, excluded) = split_outcomes(outcomes)?;
    let (theta, next_cv) = scaffold_server(global, global_cv, client_cvs, &updates, eta_g)?;
    for up in &updates {
        client_cvs[up.client_id] = up.new_cv.clone();
    }
    Ok(ScaffoldRound {
        theta,
        global_cv: next_cv,
        updates,
        excluded,
    })
}

/// Server half of a SCAFFOLD round: uniform mean of parameter displacements at
/// `eta_g`, and the control variate moved by the mean variate change scaled by
/// the participation fraction. `client_cvs` holds the pre-round variates.
pub fn scaffold_server(
    global: &ParamSet,
    global_cv: &ControlVariate,
    client_cvs: &[ControlVariate],
    updates: &[ClientUpdate],
    eta_g: f64,
) -> Result<(ParamSet, ControlVariate)> {
    if updates.is_empty() {
        return Ok((global.clone(), global_cv.clone()));
    }
    let w = 1.0 / updates.len() as f64;
    let mut contributions = Vec::with_capacity(updates.len());
    let mut deltas = Vec::with_capacity(updates.len());
    for up in updates {
        contributions.push((w, global.tensors.sub(&up.theta.tensors)?));
        deltas.push(up.new_cv.sub(&client_cvs[up.client_id])?);
    }
    let theta = global_update(global, &contributions, eta_g)?;
    Ok((theta, scaffold_cv_update(global_cv, &deltas, client_cvs.len())?))
}

/// Zeroed control variates for `clients` clients shaped like `params`.
pub fn zero_cvs(params: &ParamSet, clients: usize) -> Vec<Tensors> {
    vec![Tensors::zeros_like(&params.tensors); clients]
}
