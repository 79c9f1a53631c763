//! Label-skew partitioners.
//!
//! Each class's samples are shuffled and split into a train pool and a test
//! pool (stratified by `test_fraction`). The pools are then divided among
//! clients with one allocation matrix per pool, so every sample lands in
//! exactly one shard and each shard's train/test split is stratified by class.

use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Role, Stream};

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Dirichlet label skew over all classes.
    #[serde(rename = "LS")]
    Ls,
    /// Exactly `classes_per_client` classes per client.
    #[serde(rename = "LSMC")]
    Lsmc,
    /// Class count drawn from `[min_classes, m]`; more classes, more samples.
    #[serde(rename = "LQSMC")]
    Lqsmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub clients: usize,
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "default_n")]
    pub classes_per_client: usize,
    #[serde(default = "default_n")]
    pub min_classes: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_n() -> usize {
    2
}
fn default_test_fraction() -> f64 {
    0.2
}

impl PartitionSpec {
    pub fn new(mode: PartitionMode, clients: usize, seed: u64) -> Self {
        Self {
            mode,
            clients,
            dirichlet_alpha: default_alpha(),
            classes_per_client: default_n(),
            min_classes: default_n(),
            test_fraction: default_test_fraction(),
            seed,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.clients == 0 {
            return bad("partition needs at least one client".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        match self.mode {
            PartitionMode::Ls if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) => {
                bad(format!("dirichlet_alpha must be positive, got {}", self.dirichlet_alpha))
            }
            PartitionMode::Lsmc if self.classes_per_client == 0 || self.classes_per_client > num_classes => bad(
                format!("classes_per_client {} outside [1, {num_classes}]", self.classes_per_client),
            ),
            PartitionMode::Lqsmc if self.min_classes == 0 || self.min_classes > num_classes => {
                bad(format!("min_classes {} outside [1, {num_classes}]", self.min_classes))
            }
            _ => Ok(()),
        }
    }
}

/// Client-by-class sample counts for one pool.
type Allocation = Vec<Vec<usize>>;

struct Pools {
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

pub fn partition(dataset: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    let m = dataset.num_classes;
    spec.validate(m)?;
    let mut rng = stream(spec.seed, Role::Partition, 0, 0);
    let pools = split_pools(dataset, spec.test_fraction, &mut rng);
    let train_supply: Vec<usize> = pools.train.iter().map(Vec::len).collect();
    let test_supply: Vec<usize> = pools.test.iter().map(Vec::len).collect();

    let (train_alloc, test_alloc) = match spec.mode {
        PartitionMode::Ls => allocate_ls(spec, &train_supply, &test_supply, &mut rng)?,
        PartitionMode::Lsmc => allocate_lsmc(spec, &train_supply, &test_supply, &mut rng)?,
        PartitionMode::Lqsmc => allocate_lqsmc(spec, &train_supply, &test_supply, &mut rng)?,
    };
    Ok(materialize(dataset, &pools, &train_alloc, &test_alloc))
}

fn split_pools(dataset: &LabeledDataset, test_fraction: f64, rng: &mut Stream) -> Pools {
    let m = dataset.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train = Vec::with_capacity(m);
    let mut test = Vec::with_capacity(m);
    for mut idx in by_class {
        idx.shuffle(rng);
        let n = idx.len();
        let n_test = if n >= 2 {
            ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let tr = idx.split_off(n_test);
        test.push(idx);
        train.push(tr);
    }
    Pools { train, test }
}

fn materialize(dataset: &LabeledDataset, pools: &Pools, train_alloc: &Allocation, test_alloc: &Allocation) -> Vec<ClientShard> {
    let k_total = train_alloc.len();
    let m = dataset.num_classes;
    let mut train_idx: Vec<Vec<usize>> = vec![Vec::new(); k_total];
    let mut test_idx: Vec<Vec<usize>> = vec![Vec::new(); k_total];
    for c in 0..m {
        let (mut tr_pos, mut te_pos) = (0, 0);
        for k in 0..k_total {
            let a = train_alloc[k][c];
            train_idx[k].extend_from_slice(&pools.train[c][tr_pos..tr_pos + a]);
            tr_pos += a;
            let b = test_alloc[k][c];
            test_idx[k].extend_from_slice(&pools.test[c][te_pos..te_pos + b]);
            te_pos += b;
        }
        debug_assert_eq!(tr_pos, pools.train[c].len());
        debug_assert_eq!(te_pos, pools.test[c].len());
    }
    train_idx
        .into_iter()
        .zip(test_idx)
        .enumerate()
        .map(|(client_id, (tr, te))| {
            let train = dataset.subset(&tr);
            let class_counts = train.class_histogram();
            ClientShard {
                client_id,
                test: dataset.subset(&te),
                train,
                class_counts,
                train_indices: tr,
                test_indices: te,
            }
        })
        .collect()
}

/// Normalised Dirichlet draw via Gamma variates.
fn dirichlet(alpha: f64, len: usize, rng: &mut Stream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every variate underflowed: put all mass on one coordinate
        let hot = rng.random_range(0..len);
        (0..len).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
    }
}

/// Splits `total` into integer parts proportional to `weights`, each part at
/// least `floor`. Remainders go to the largest fractional parts, ties to the
/// lower index.
fn largest_remainder(total: usize, weights: &[f64], floor: usize) -> Option<Vec<usize>> {
    let base = floor * weights.len();
    if total < base {
        return None;
    }
    let rest = total - base;
    let wsum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if wsum > 0.0 {
        weights.iter().map(|w| rest as f64 * w / wsum).collect()
    } else {
        vec![rest as f64 / weights.len() as f64; weights.len()]
    };
    let mut parts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(rest.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    Some(parts.into_iter().map(|p| p + floor).collect())
}

fn allocate_ls(spec: &PartitionSpec, train: &[usize], test: &[usize], rng: &mut Stream) -> Result<(Allocation, Allocation)> {
    let k_total = spec.clients;
    let m = train.len();
    if train.iter().sum::<usize>() < k_total {
        return Err(Error::InfeasiblePartition(format!("fewer training samples than {k_total} clients")));
    }
    let mut tr = vec![vec![0; m]; k_total];
    let mut te = vec![vec![0; m]; k_total];
    let mut q = Vec::with_capacity(m);
    for c in 0..m {
        let qc = dirichlet(spec.dirichlet_alpha, k_total, rng);
        let a = largest_remainder(train[c], &qc, 0).expect("floor 0 always fits");
        let b = largest_remainder(test[c], &qc, 0).expect("floor 0 always fits");
        for k in 0..k_total {
            tr[k][c] = a[k];
            te[k][c] = b[k];
        }
        q.push(qc);
    }
    // an empty client takes one training sample of its most favoured class
    // from the holder with the most spare samples of that class
    for k in 0..k_total {
        if tr[k].iter().sum::<usize>() > 0 {
            continue;
        }
        let mut classes: Vec<usize> = (0..m).collect();
        classes.sort_by(|&a, &b| q[b][k].total_cmp(&q[a][k]).then(a.cmp(&b)));
        let (donor, c) = classes
            .iter()
            .find_map(|&c| {
                (0..k_total)
                    .filter(|&j| tr[j][c] > 0 && tr[j].iter().sum::<usize>() >= 2)
                    .max_by(|&a, &b| tr[a][c].cmp(&tr[b][c]).then(b.cmp(&a)))
                    .map(|j| (j, c))
            })
            .expect("total training samples cover every client");
        tr[donor][c] -= 1;
        tr[k][c] += 1;
    }
    Ok((tr, te))
}

/// Random class sets of the requested sizes, repaired so every class has at
/// least one holder.
fn class_sets(sizes: &[usize], m: usize, rng: &mut Stream) -> Result<Vec<Vec<usize>>> {
    if sizes.iter().sum::<usize>() < m {
        return Err(Error::InfeasiblePartition(format!(
            "{} class slots cannot cover {m} classes",
            sizes.iter().sum::<usize>()
        )));
    }
    let mut sets: Vec<Vec<usize>> = sizes.iter().map(|&n| index::sample(rng, m, n).into_vec()).collect();
    let mut holders = vec![0usize; m];
    for s in &sets {
        for &c in s {
            holders[c] += 1;
        }
    }
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.shuffle(rng);
    for c in 0..m {
        if holders[c] > 0 {
            continue;
        }
        // some class has two holders by pigeonhole; swap one of its slots for c
        let (k, pos) = order
            .iter()
            .find_map(|&k| {
                sets[k]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &cc)| holders[cc] >= 2)
                    .max_by(|a, b| holders[*a.1].cmp(&holders[*b.1]).then(b.1.cmp(a.1)))
                    .map(|(pos, _)| (k, pos))
            })
            .expect("uncovered class implies a doubly held class");
        holders[sets[k][pos]] -= 1;
        sets[k][pos] = c;
        holders[c] += 1;
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    Ok(sets)
}

/// Per-client mixing ratios over its own classes, keyed by class.
fn intra_ratios(sets: &[Vec<usize>], m: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    sets.iter()
        .map(|set| {
            let p = dirichlet(1.0, set.len(), rng);
            let mut row = vec![0.0; m];
            for (&c, v) in set.iter().zip(p) {
                row[c] = v;
            }
            row
        })
        .collect()
}

fn allocate_lsmc(spec: &PartitionSpec, train: &[usize], test: &[usize], rng: &mut Stream) -> Result<(Allocation, Allocation)> {
    let k_total = spec.clients;
    let m = train.len();
    let sets = class_sets(&vec![spec.classes_per_client; k_total], m, rng)?;
    let ratios = intra_ratios(&sets, m, rng);
    let mut tr = vec![vec![0; m]; k_total];
    let mut te = vec![vec![0; m]; k_total];
    for c in 0..m {
        let holders: Vec<usize> = (0..k_total).filter(|&k| sets[k].binary_search(&c).is_ok()).collect();
        let w: Vec<f64> = holders.iter().map(|&k| ratios[k][c]).collect();
        let starved = |pool: &str, have: usize| {
            Error::InfeasiblePartition(format!(
                "class {c} has {have} {pool} samples but {} clients hold it",
                holders.len()
            ))
        };
        let a = largest_remainder(train[c], &w, 1).ok_or_else(|| starved("train", train[c]))?;
        let b = largest_remainder(test[c], &w, 1).ok_or_else(|| starved("test", test[c]))?;
        for (i, &k) in holders.iter().enumerate() {
            tr[k][c] = a[i];
            te[k][c] = b[i];
        }
    }
    Ok((tr, te))
}

fn allocate_lqsmc(spec: &PartitionSpec, train: &[usize], test: &[usize], rng: &mut Stream) -> Result<(Allocation, Allocation)> {
    let k_total = spec.clients;
    let m = train.len();
    let mut last_err = None;
    for _ in 0..MAX_ATTEMPTS {
        let counts: Vec<usize> = (0..k_total).map(|_| rng.random_range(spec.min_classes..=m)).collect();
        if counts.iter().sum::<usize>() < m {
            last_err = Some(Error::InfeasiblePartition(format!("sampled class counts cannot cover {m} classes")));
            continue;
        }
        let sets = class_sets(&counts, m, rng)?;
        let ratios = intra_ratios(&sets, m, rng);
        let tr = quantity_allocation(&sets, &counts, &ratios, train);
        let te = quantity_allocation(&sets, &counts, &ratios, test);
        match (tr, te) {
            (Ok(tr), Ok(te)) => return Ok((tr, te)),
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::InfeasiblePartition("no feasible class assignment".into())))
}

/// Splits one pool so that client `k` receives exactly `d_k` samples, with
/// `d_k` proportional to its class count (so larger class sets never get
/// fewer samples), at least one sample per held class, and the per-class
/// split skewed by `ratios` as far as the supplies allow.
fn quantity_allocation(sets: &[Vec<usize>], counts: &[usize], ratios: &[Vec<f64>], supply: &[usize]) -> Result<Allocation> {
    let k_total = sets.len();
    let m = supply.len();
    let total: usize = supply.iter().sum();
    let slots: usize = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let extra = largest_remainder(total.checked_sub(slots).ok_or_else(|| {
        Error::InfeasiblePartition(format!("{total} samples cannot fill {slots} class slots"))
    })?, &weights, 0)
    .expect("floor 0 always fits");

    let mut remaining: Vec<usize> = supply.to_vec();
    let mut alloc = vec![vec![0; m]; k_total];
    for (k, set) in sets.iter().enumerate() {
        for &c in set {
            if remaining[c] == 0 {
                return Err(Error::InfeasiblePartition(format!("class {c} has fewer samples than holders")));
            }
            alloc[k][c] = 1;
            remaining[c] -= 1;
        }
    }

    for prefill in [1.0, 0.5, 0.0] {
        let mut a = alloc.clone();
        let mut rem = remaining.clone();
        let mut demand = extra.clone();
        if prefill > 0.0 {
            for k in 0..k_total {
                for &c in &sets[k] {
                    let want = (prefill * extra[k] as f64 * ratios[k][c]).floor() as usize;
                    let take = want.min(rem[c]).min(demand[k]);
                    a[k][c] += take;
                    rem[c] -= take;
                    demand[k] -= take;
                }
            }
        }
        if complete_with_flow(sets, &mut a, &mut rem, &mut demand) {
            return Ok(a);
        }
    }
    Err(Error::InfeasiblePartition("class supplies cannot meet quantity-skewed demands".into()))
}

/// Routes remaining supply to remaining demand along held (client, class)
/// pairs with Edmonds-Karp. Returns whether every demand was met.
fn complete_with_flow(sets: &[Vec<usize>], alloc: &mut Allocation, supply: &mut [usize], demand: &mut [usize]) -> bool {
    let k_total = sets.len();
    let m = supply.len();
    let need: usize = demand.iter().sum();
    if need == 0 {
        return true;
    }
    // nodes: 0 source, 1..=m classes, m+1..=m+k clients, m+k+1 sink
    let n = m + k_total + 2;
    let (src, sink) = (0, n - 1);
    let mut cap = vec![vec![0i64; n]; n];
    let inf = i64::MAX / 4;
    for c in 0..m {
        cap[src][1 + c] = supply[c] as i64;
    }
    for (k, set) in sets.iter().enumerate() {
        for &c in set {
            cap[1 + c][1 + m + k] = inf;
        }
        cap[1 + m + k][sink] = demand[k] as i64;
    }
    let original = cap.clone();
    let mut flow = 0i64;
    loop {
        let mut parent = vec![usize::MAX; n];
        parent[src] = src;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if parent[v] == usize::MAX && cap[u][v] > 0 {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut push = inf;
        let mut v = sink;
        while v != src {
            let u = parent[v];
            push = push.min(cap[u][v]);
            v = u;
        }
        let mut v = sink;
        while v != src {
            let u = parent[v];
            cap[u][v] -= push;
            cap[v][u] += push;
            v = u;
        }
        flow += push;
    }
    if flow as usize != need {
        return false;
    }
    for (k, set) in sets.iter().enumerate() {
        for &c in set {
            let used = original[1 + c][1 + m + k] - cap[1 + c][1 + m + k];
            let used = used.max(0) as usize;
            alloc[k][c] += used;
            supply[c] -= used;
            demand[k] -= used;
        }
    }
    true
}
