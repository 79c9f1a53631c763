#![allow(dead_code)]

use std::collections::BTreeMap;

use fedsat::dataset::{ClientShard, LabeledDataset};
use fedsat::worker::ClassStats;
use rand::Rng;

/// Result of the straight-line weight oracle.
#[derive(Debug, Clone)]
pub struct NaiveReport {
    pub scores: Vec<(usize, Vec<f64>)>,
    pub priority_class: usize,
    pub aggregation_set: Vec<usize>,
    pub weights: Vec<(usize, f64)>,
}

/// Rates, scores, priority class, aggregation set and weights computed with
/// plain loops over the raw counts. `clients` must be sorted by id.
pub fn naive_weights(clients: &[(usize, Vec<ClassStats>)], alpha: f64, beta: f64, sigma: f64, normalize: bool) -> NaiveReport {
    let m = clients[0].1[0].predicted.len();
    let mut scores = Vec::new();
    let mut raw = Vec::new();
    let mut pooled = Vec::new();
    for (id, workers) in clients {
        let mut z = vec![0u64; m];
        let mut tp = vec![0u64; m];
        let mut t = vec![0u64; m];
        let mut total = 0u64;
        for w in workers {
            for i in 0..m {
                z[i] += w.predicted[i];
                tp[i] += w.true_positive[i];
                t[i] += w.target[i];
            }
            let mut n = 0;
            for i in 0..m {
                n += w.target[i];
            }
            total += n;
        }
        let mut fnr = vec![0.0; m];
        let mut fpr = vec![0.0; m];
        let mut acc = vec![0.0; m];
        for i in 0..m {
            let d_fnr = if tp[i] == 0 { 1 } else { tp[i] };
            fnr[i] = (t[i] - tp[i]) as f64 / d_fnr as f64;
            let neg = total - t[i];
            fpr[i] = (z[i] - tp[i]) as f64 / (if neg == 0 { 1 } else { neg }) as f64;
            acc[i] = tp[i] as f64 / (if t[i] == 0 { 1 } else { t[i] }) as f64;
        }
        let mut max_fnr = 0.0;
        let mut max_fpr = 0.0;
        for i in 0..m {
            if fnr[i] > max_fnr {
                max_fnr = fnr[i];
            }
            if fpr[i] > max_fpr {
                max_fpr = fpr[i];
            }
        }
        let mut e = vec![0.0; m];
        for i in 0..m {
            let a = if max_fnr == 0.0 { 0.0 } else { fnr[i] / max_fnr };
            let b = if max_fpr == 0.0 { 0.0 } else { fpr[i] / max_fpr };
            e[i] = alpha * a + beta * b;
        }
        scores.push((*id, e));
        pooled.push((*id, acc, tp, t));
    }

    let mut class_sum = vec![0.0; m];
    for (_, e) in &scores {
        for i in 0..m {
            class_sum[i] += e[i];
        }
    }
    let mut pc = 0;
    for i in 1..m {
        if class_sum[i] > class_sum[pc] {
            pc = i;
        }
    }

    let mut totals = Vec::new();
    let mut grand = 0.0;
    for (id, e) in &scores {
        let s: f64 = e.iter().sum();
        totals.push((*id, s));
        grand += s;
    }
    let threshold = sigma / scores.len() as f64 * grand;
    let mut set: Vec<usize> = totals.iter().filter(|(_, s)| *s > 0.0 && *s >= threshold).map(|(id, _)| *id).collect();
    if set.is_empty() {
        set = totals.iter().map(|(id, _)| *id).collect();
    }

    for (idx, (id, acc, tp, t)) in pooled.iter().enumerate() {
        if !set.contains(id) {
            continue;
        }
        let sum_acc: f64 = acc.iter().sum();
        let sum_tp: u64 = tp.iter().sum();
        let sum_t: u64 = t.iter().sum();
        let mut sum_e = totals[idx].1;
        if sum_e < 1e-9 {
            sum_e = 1e-9;
        }
        let tp_pc = if tp[pc] == 0 { 1 } else { tp[pc] };
        let err = if sum_t - sum_tp == 0 { 1 } else { sum_t - sum_tp };
        raw.push((*id, sum_acc * sum_tp as f64 / sum_e * (tp_pc as f64 / err as f64)));
    }
    let weights = if normalize {
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        raw.iter()
            .map(|(id, w)| (*id, if total > 0.0 { w / total } else { 1.0 / raw.len() as f64 }))
            .collect()
    } else {
        raw
    };
    NaiveReport {
        scores,
        priority_class: pc,
        aggregation_set: set,
        weights,
    }
}

/// Counts from a simulated classifier: each worker sees `[1, 30]` samples
/// per class and predicts the true class with a client-specific skill.
pub fn random_stats<R: Rng>(rng: &mut R, clients: usize, classes: usize, workers: usize) -> BTreeMap<usize, Vec<ClassStats>> {
    let mut out = BTreeMap::new();
    let mut next_worker = 1000;
    for k in 0..clients {
        let id = k * 7 + rng.random_range(0..7);
        let skill: f64 = rng.random_range(0.0..1.0);
        let mut reports = Vec::new();
        for _ in 0..workers {
            let mut s = ClassStats {
                predicted: vec![0; classes],
                true_positive: vec![0; classes],
                target: vec![0; classes],
                worker_id: next_worker,
                client_id: id,
            };
            next_worker += 1;
            for c in 0..classes {
                let n = if rng.random_bool(0.2) { 0 } else { rng.random_range(1..30) };
                for _ in 0..n {
                    s.target[c] += 1;
                    let p = if rng.random_bool(skill) { c } else { rng.random_range(0..classes) };
                    s.predicted[p] += 1;
                    if p == c {
                        s.true_positive[c] += 1;
                    }
                }
            }
            reports.push(s);
        }
        out.insert(id, reports);
    }
    out
}

/// Splits `ds` round-robin into `k` client shards with empty test sets.
pub fn round_robin_shards(ds: &LabeledDataset, k: usize) -> Vec<ClientShard> {
    (0..k)
        .map(|c| {
            let idx: Vec<usize> = (c..ds.len()).step_by(k).collect();
            let train = ds.subset(&idx);
            ClientShard {
                client_id: c,
                class_counts: train.class_histogram(),
                test: LabeledDataset::empty(ds.dim(), ds.num_classes),
                train,
                train_indices: idx,
                test_indices: vec![],
            }
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Fraction of steps where the trailing `window`-round mean does not drop.
pub fn moving_average_nondecreasing_fraction(acc: &[f64], window: usize) -> f64 {
    let ma: Vec<f64> = acc.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    if ma.len() < 2 {
        return 1.0;
    }
    let ok = ma.windows(2).filter(|p| p[1] >= p[0]).count();
    ok as f64 / (ma.len() - 1) as f64
}
