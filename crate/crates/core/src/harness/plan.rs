use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Role};

/// Clients selected for a round and the disjoint worker set assigned to each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: usize,
    /// Ascending client ids.
    pub clients: Vec<usize>,
    /// `workers[i]` serves `clients[i]`.
    pub workers: Vec<Vec<usize>>,
}

impl RoundPlan {
    pub fn workers_of(&self, client: usize) -> Option<&[usize]> {
        self.clients.iter().position(|&c| c == client).map(|i| self.workers[i].as_slice())
    }
}

/// Samples `clients_per_round` ids from `[0, total)` without replacement, then
/// draws each client's workers sequentially from the ids still unused.
pub fn plan_round(round: usize, total: usize, clients_per_round: usize, workers_per_client: usize, master_seed: u64) -> Result<RoundPlan> {
    let needed = clients_per_round * (1 + workers_per_client);
    if needed > total {
        return Err(Error::WorkerPoolExhausted { needed, available: total });
    }
    let mut rng = stream(master_seed, Role::RoundPlan, round as u64, 0);
    let mut clients = index::sample(&mut rng, total, clients_per_round).into_vec();
    clients.sort_unstable();
    let mut pool: Vec<usize> = (0..total).filter(|k| clients.binary_search(k).is_err()).collect();
    let mut workers = Vec::with_capacity(clients.len());
    for _ in &clients {
        let mut picks = index::sample(&mut rng, pool.len(), workers_per_client).into_vec();
        let mut chosen: Vec<usize> = picks.iter().map(|&i| pool[i]).collect();
        chosen.sort_unstable();
        picks.sort_unstable_by(|a, b| b.cmp(a));
        for i in picks {
            pool.swap_remove(i);
        }
        pool.sort_unstable();
        workers.push(chosen);
    }
    Ok(RoundPlan { round, clients, workers })
}
