mod common;

use std::collections::BTreeMap;

use fedsat::aggregation::{
    compute_rates, compute_statistical_weights, fine_tune_gradients, global_update, prioritization_scores, raw_weight,
    select_aggregation_set, select_priority_class, AggregationConfig,
};
use fedsat::nn::{init_mlp, Activation, ParamSet};
use fedsat::rng::{stream, Role};
use fedsat::worker::ClassStats;
use proptest::prelude::*;

use common::{naive_weights, random_stats};

fn fixture(seed: u64) -> BTreeMap<usize, Vec<ClassStats>> {
    let mut rng = stream(seed, Role::Probe, 0, 0);
    let clients = 2 + (seed % 4) as usize;
    let classes = 2 + (seed % 9) as usize;
    let workers = 1 + (seed % 3) as usize;
    random_stats(&mut rng, clients, classes, workers)
}

proptest! {
    #[test]
    fn matches_naive_oracle(seed in any::<u64>(), sigma in 0.1f64..1.5, alpha in 0.0f64..1.0, beta in 0.0f64..1.0, normalize in any::<bool>()) {
        let stats = fixture(seed);
        let cfg = AggregationConfig { alpha, beta, sigma, normalize_weights: normalize, ..Default::default() };
        let got = compute_statistical_weights(&stats, &cfg).unwrap();
        let listed: Vec<_> = stats.iter().map(|(k, v)| (*k, v.clone())).collect();
        let want = naive_weights(&listed, alpha, beta, sigma, normalize);
        prop_assert_eq!(got.priority_class, want.priority_class);
        prop_assert_eq!(&got.aggregation_set, &want.aggregation_set);
        for (k, w) in &want.weights {
            prop_assert!((got.weights[k] - w).abs() <= 1e-9 * w.abs().max(1.0));
        }
    }

    #[test]
    fn score_scaling_keeps_selection(seed in any::<u64>(), scale in 1e-3f64..1e3, sigma in 0.1f64..1.5) {
        let stats = fixture(seed);
        let scores: BTreeMap<usize, Vec<f64>> = stats
            .iter()
            .map(|(&k, s)| (k, prioritization_scores(&compute_rates(s).unwrap(), 0.3, 0.2)))
            .collect();
        let scaled: BTreeMap<usize, Vec<f64>> = scores.iter().map(|(&k, v)| (k, v.iter().map(|x| x * scale).collect())).collect();
        prop_assert_eq!(select_priority_class(&scores), select_priority_class(&scaled));
        prop_assert_eq!(select_aggregation_set(&scores, sigma), select_aggregation_set(&scaled, sigma));
    }

    #[test]
    fn enumeration_order_is_irrelevant(seed in any::<u64>()) {
        let stats = fixture(seed);
        let cfg = AggregationConfig::default();
        let base = compute_statistical_weights(&stats, &cfg).unwrap();
        // relabel-free reorder: reverse each client's worker list
        let reversed: BTreeMap<usize, Vec<ClassStats>> = stats
            .iter()
            .map(|(&k, v)| (k, v.iter().rev().cloned().collect()))
            .collect();
        let other = compute_statistical_weights(&reversed, &cfg).unwrap();
        prop_assert_eq!(base.priority_class, other.priority_class);
        prop_assert_eq!(base.aggregation_set, other.aggregation_set);
        for (k, w) in &base.weights {
            prop_assert!((other.weights[k] - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn outputs_stay_finite(
        counts in prop::collection::vec((0u64..5, 0u64..5, 0u64..5), 2..6),
        clients in 1usize..4,
    ) {
        // arbitrary small counts including all-zero classes and empty workers
        let m = counts.len();
        let mut stats = BTreeMap::new();
        for k in 0..clients {
            let mut s = ClassStats { predicted: vec![0; m], true_positive: vec![0; m], target: vec![0; m], worker_id: k, client_id: k };
            for (i, &(tp, fneg, _)) in counts.iter().enumerate() {
                let t = tp + fneg * k as u64;
                s.target[i] = t;
                s.true_positive[i] = tp.min(t);
            }
            let wrong: u64 = s.target.iter().zip(&s.true_positive).map(|(t, p)| t - p).sum();
            s.predicted = s.true_positive.clone();
            s.predicted[(k + counts[0].2 as usize) % m] += wrong;
            stats.insert(k, vec![s]);
        }
        let r = compute_statistical_weights(&stats, &AggregationConfig::default()).unwrap();
        prop_assert!(r.scores.values().flatten().all(|v| v.is_finite()));
        prop_assert!(r.weights.values().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!(!r.aggregation_set.is_empty());
    }

    #[test]
    fn more_priority_hits_never_lower_raw_weight(seed in any::<u64>(), bump in 1u64..20) {
        let stats = fixture(seed);
        let workers = stats.values().next().unwrap();
        let rates = compute_rates(workers).unwrap();
        let scores = prioritization_scores(&rates, 0.3, 0.2);
        let pc = 0;
        let before = raw_weight(&rates, workers, &scores, pc).unwrap();
        let mut boosted = workers.clone();
        boosted[0].true_positive[pc] += bump;
        boosted[0].predicted[pc] += bump;
        boosted[0].target[pc] += bump;
        // rates and scores held fixed, only the TP[PC] count moves
        let after = raw_weight(&rates, &boosted, &scores, pc).unwrap();
        prop_assert!(after >= before, "{before} -> {after}");
    }

    #[test]
    fn reduction_settings_average_parameters(seed in any::<u64>(), n in 1usize..6) {
        let global = init_mlp(&[4, 5, 3], Activation::Elu, seed).unwrap();
        let clients: Vec<ParamSet> = (0..n).map(|i| init_mlp(&[4, 5, 3], Activation::Elu, seed.wrapping_add(i as u64 + 1)).unwrap()).collect();
        let lambda = vec![0.0; global.num_layers()];
        let contributions: Vec<_> = clients
            .iter()
            .map(|c| (1.0 / n as f64, fine_tune_gradients(&global, c, &lambda, 0.0).unwrap()))
            .collect();
        let out = global_update(&global, &contributions, 1.0).unwrap();
        for (idx, v) in out.tensors.iter().enumerate() {
            let mean: f64 = clients.iter().map(|c| c.tensors.iter().nth(idx).unwrap()).sum::<f64>() / n as f64;
            prop_assert!((v - mean).abs() <= 1e-12);
        }
    }
}
