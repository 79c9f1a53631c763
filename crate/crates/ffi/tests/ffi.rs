use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use fedsat_ffi::*;

fn last_error() -> String {
    let p = fedsat_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_lifecycle_and_prediction() {
    let sizes = [3usize, 5, 2];
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(fedsat_model_init(sizes.as_ptr(), sizes.len(), 0, 7, &mut model), FedsatStatus::Ok);
        let mut layers = 0;
        assert_eq!(fedsat_model_num_layers(model, &mut layers), FedsatStatus::Ok);
        assert_eq!(layers, 2);

        let x = [0.1, 0.2, 0.3, 0.9, 0.8, 0.7];
        let mut labels = [9usize; 2];
        assert_eq!(fedsat_model_predict(model, x.as_ptr(), 2, 3, labels.as_mut_ptr()), FedsatStatus::Ok);
        assert!(labels.iter().all(|&l| l < 2));

        assert_eq!(fedsat_model_predict(model, x.as_ptr(), 3, 2, labels.as_mut_ptr()), FedsatStatus::ShapeMismatch);
        assert!(last_error().contains("shape"));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(fedsat_model_save(model, path.as_ptr()), FedsatStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(fedsat_model_load(path.as_ptr(), &mut loaded), FedsatStatus::Ok);
        let mut again = [9usize; 2];
        assert_eq!(fedsat_model_predict(loaded, x.as_ptr(), 2, 3, again.as_mut_ptr()), FedsatStatus::Ok);
        assert_eq!(labels, again);
        fedsat_model_free(loaded);
        fedsat_model_free(model);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(fedsat_model_init(ptr::null(), 0, 0, 0, &mut model), FedsatStatus::NullPointer);
        let sizes = [4usize];
        assert_eq!(fedsat_model_init(sizes.as_ptr(), 1, 0, 0, &mut model), FedsatStatus::InvalidArgument);
        let sizes = [4usize, 2];
        assert_eq!(fedsat_model_init(sizes.as_ptr(), 2, 9, 0, &mut model), FedsatStatus::InvalidArgument);
        assert!(last_error().contains("activation"));
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(fedsat_model_load(missing.as_ptr(), &mut model), FedsatStatus::Io);
        assert!(model.is_null());
        fedsat_model_free(ptr::null_mut());
        fedsat_string_free(ptr::null_mut());
    }
}

#[test]
fn statistical_weights_over_json() {
    let stats = r#"{
        "0": [{"predicted": [9, 6], "true_positive": [8, 3], "target": [10, 5], "worker_id": 5, "client_id": 0}],
        "1": [{"predicted": [4, 6], "true_positive": [4, 6], "target": [4, 6], "worker_id": 6, "client_id": 1}]
    }"#;
    let stats = CString::new(stats).unwrap();
    let cfg = CString::new(r#"{"sigma": 1.0}"#).unwrap();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(fedsat_statistical_weights_json(stats.as_ptr(), cfg.as_ptr(), &mut out), FedsatStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        fedsat_string_free(out);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["priority_class"], 1);
        assert_eq!(v["aggregation_set"], serde_json::json!([0]));
        assert_eq!(v["weights"]["0"], 1.0);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(fedsat_statistical_weights_json(bad.as_ptr(), ptr::null(), &mut out), FedsatStatus::Format);
    }
}

#[test]
fn run_from_json_config() {
    let cfg = r#"{
        "method": "fedsat",
        "dataset": {"kind": "synthetic", "classes": 2, "dim": 4, "per_class": 30},
        "partition": {"mode": "LSMC", "clients": 6},
        "model": {"layer_sizes": [4, 6, 2]},
        "rounds": 2,
        "clients_per_round": 2,
        "workers_per_client": 1
    }"#;
    let cfg = CString::new(cfg).unwrap();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(fedsat_run_from_json(cfg.as_ptr(), &mut run), FedsatStatus::Ok, "{}", last_error());
        let mut rounds = 0;
        assert_eq!(fedsat_run_num_rounds(run, &mut rounds), FedsatStatus::Ok);
        assert_eq!(rounds, 2);
        let mut acc = -1.0;
        assert_eq!(fedsat_run_accuracy(run, 1, &mut acc), FedsatStatus::Ok);
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(fedsat_run_accuracy(run, 2, &mut acc), FedsatStatus::InvalidArgument);

        let mut csv = ptr::null_mut();
        assert_eq!(fedsat_run_metrics_csv(run, &mut csv), FedsatStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        fedsat_string_free(csv);
        assert!(text.starts_with("round,method,seed,global_acc"));
        assert_eq!(text.lines().count(), 3);

        let mut best = ptr::null_mut();
        assert_eq!(fedsat_run_best_model(run, &mut best), FedsatStatus::Ok);
        fedsat_model_free(best);
        fedsat_run_free(run);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(fedsat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("fedsat.h").exists());
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("cc not available; skipping header compile");
        return;
    };
    assert!(probe.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use_header.c");
    std::fs::write(
        &src,
        r#"#include "fedsat.h"
int main(void) {
    FedsatModel *m = NULL;
    size_t sizes[3] = {4, 3, 2};
    FedsatStatus s = fedsat_model_init(sizes, 3, 0, 1, &m);
    if (s != FEDSAT_STATUS_OK) { return (int)s; }
    fedsat_model_free(m);
    return fedsat_last_error_message() == NULL ? 0 : 1;
}
"#,
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-o"])
        .arg(dir.path().join("use_header.o"))
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
