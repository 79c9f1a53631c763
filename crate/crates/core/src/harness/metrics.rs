use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use crate::aggregation::RateReport;
use crate::baselines::Exclusion;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "best_model.ckpt";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub method: Method,
    pub seed: u64,
    pub global_acc: f64,
    /// `None` for methods without a priority class.
    pub priority_class: Option<usize>,
    pub agg_set_size: usize,
    pub per_class_acc: Vec<f64>,
    pub wall_ms: u64,
}

/// One line of the JSONL sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub priority_class: Option<usize>,
    pub aggregation_set: Vec<usize>,
    pub weights: BTreeMap<usize, f64>,
    pub per_client_rates: BTreeMap<usize, RateReport>,
    #[serde(default)]
    pub scores: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    pub layer_coefficients: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
}

pub fn csv_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["round", "method", "seed", "global_acc", "priority_class", "agg_set_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..num_classes).map(|i| format!("per_class_acc_{i}")));
    h.push("wall_ms".into());
    h
}

fn csv_err(e: csv::Error) -> Error {
    Error::Metrics(e.to_string())
}

pub fn write_metrics_csv(records: &[MetricsRecord], num_classes: usize, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(num_classes)).map_err(csv_err)?;
    for r in records {
        if r.per_class_acc.len() != num_classes {
            return Err(Error::InconsistentClassCount {
                expected: num_classes,
                found: r.per_class_acc.len(),
            });
        }
        let mut row = vec![
            r.round.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            r.global_acc.to_string(),
            r.priority_class.map(|c| c.to_string()).unwrap_or_default(),
            r.agg_set_size.to_string(),
        ];
        row.extend(r.per_class_acc.iter().map(f64::to_string));
        row.push(r.wall_ms.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Metrics(e.to_string()))
}

pub fn read_metrics_csv(input: impl Read) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.len() < 7 {
        return Err(Error::Metrics(format!("header has {} columns", header.len())));
    }
    let m = header.len() - 7;
    if header.iter().collect::<Vec<_>>() != csv_header(m) {
        return Err(Error::Metrics("unexpected header".into()));
    }
    fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
        let s = row.get(i).unwrap_or("");
        s.parse().map_err(|_| Error::Metrics(format!("cannot parse column {i}: {s:?}")))
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        let pc = row.get(4).unwrap_or("");
        out.push(MetricsRecord {
            round: field(&row, 0)?,
            method: row.get(1).unwrap_or("").parse()?,
            seed: field(&row, 2)?,
            global_acc: field(&row, 3)?,
            priority_class: if pc.is_empty() { None } else { Some(field(&row, 4)?) },
            agg_set_size: field(&row, 5)?,
            per_class_acc: (0..m).map(|i| field(&row, 6 + i)).collect::<Result<_>>()?,
            wall_ms: field(&row, 6 + m)?,
        });
    }
    Ok(out)
}

pub fn write_round_logs(logs: &[RoundLog], mut out: impl Write) -> Result<()> {
    for l in logs {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n").map_err(|e| Error::Metrics(e.to_string()))?;
    }
    Ok(())
}

pub fn read_round_logs(input: impl Read) -> Result<Vec<RoundLog>> {
    let mut out = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::Metrics(e.to_string()))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV, the round sidecar and the config echo into `dir`.
pub fn emit_metrics(records: &[MetricsRecord], logs: &[RoundLog], config: &RunConfig, num_classes: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_metrics_csv(records, num_classes, create(&dir.join(METRICS_FILE))?)?;
    write_round_logs(logs, create(&dir.join(ROUNDS_FILE))?)?;
    let path = dir.join(CONFIG_FILE);
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, config)?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))
}
