use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;

use fedsat::harness::{
    plan_round, read_metrics_csv, read_round_logs, run, run_to_dir, Method, RunConfig, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
    ROUNDS_FILE,
};
use fedsat::nn::load_checkpoint;
use proptest::prelude::*;

fn smoke_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke_synthetic.json")
}

fn smoke(method: Method) -> RunConfig {
    let mut cfg = RunConfig::load(smoke_path()).unwrap();
    cfg.method = method;
    cfg
}

#[test]
fn single_round_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { rounds: 1, ..smoke(Method::FedSat) };
    let out = run_to_dir(&cfg, dir.path()).unwrap();
    assert_eq!(out.records.len(), 1);
    for f in [METRICS_FILE, ROUNDS_FILE, CONFIG_FILE, CHECKPOINT_FILE] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let rows = read_metrics_csv(File::open(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(rows, out.records);
    let logs = read_round_logs(File::open(dir.path().join(ROUNDS_FILE)).unwrap()).unwrap();
    assert_eq!(logs.len(), 1);
    assert!(!logs[0].aggregation_set.is_empty());
    let sum: f64 = logs[0].weights.values().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert_eq!(load_checkpoint(dir.path().join(CHECKPOINT_FILE)).unwrap(), out.best_model);
}

#[test]
fn every_method_is_deterministic_and_finite() {
    for method in [Method::FedSat, Method::FedAvg, Method::Scaffold] {
        let cfg = smoke(method);
        let a = run(&cfg).unwrap();
        let b = run(&RunConfig { threads: 4, ..cfg.clone() }).unwrap();
        assert_eq!(a.records, b.records, "{method}");
        assert_eq!(a.final_model, b.final_model, "{method}");
        assert!(a.final_model.tensors.is_finite());
        assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.global_acc)));
        assert!(a.best_accuracy >= a.final_accuracy());
    }
}

#[test]
fn reduced_fedsat_tracks_scaffold() {
    let scaffold = smoke(Method::Scaffold);
    let reduced = smoke(Method::FedSat).into_scaffold_reduction();
    let a = run(&scaffold).unwrap();
    let b = run(&reduced).unwrap();
    let gap = a.final_model.tensors.iter().zip(b.final_model.tensors.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-9, "parameter gap {gap}");
}

#[test]
fn exhausted_worker_pool_is_rejected() {
    let mut cfg = smoke(Method::FedSat);
    cfg.partition.clients = 5;
    cfg.clients_per_round = 2;
    cfg.workers_per_client = 2;
    assert!(matches!(cfg.validate(), Err(fedsat::Error::WorkerPoolExhausted { needed: 6, available: 5 })));
}

proptest! {
    #[test]
    fn round_plans_are_disjoint(total in 3usize..40, s in 1usize..5, w in 1usize..4, round in 0usize..50, seed in any::<u64>()) {
        prop_assume!(s + s * w <= total);
        let plan = plan_round(round, total, s, w, seed).unwrap();
        prop_assert_eq!(plan.clients.len(), s);
        let mut all: Vec<usize> = plan.clients.clone();
        for ws in &plan.workers {
            prop_assert_eq!(ws.len(), w);
            all.extend(ws);
        }
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert!(all.iter().all(|&i| i < total));
        prop_assert_eq!(plan, plan_round(round, total, s, w, seed).unwrap());
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedsat"))
}

#[test]
fn cli_partition_inspect_prints_manifests() {
    let out = cli().args(["partition-inspect", "--config"]).arg(smoke_path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let shards = v.as_array().unwrap();
    assert_eq!(shards.len(), 12);
    for s in shards {
        for key in ["client_id", "class_counts", "train_size", "test_size"] {
            assert!(s.get(key).is_some(), "{key}");
        }
    }
}

#[test]
fn cli_gradcheck_passes() {
    let out = cli().args(["gradcheck", "--probes", "20"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn cli_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["run", "--method", "fedavg", "--seed", "3", "--config"])
        .arg(smoke_path())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics_csv(File::open(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.method == Method::FedAvg && r.seed == 3));

    let bad = cli().args(["run", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert!(!bad.status.success());
}
