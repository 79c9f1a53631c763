//! Configuration-driven simulation runs: round planning, dispatch to clients
//! and workers, aggregation, and metrics output.

mod config;
mod metrics;
mod plan;
mod run;

pub use config::{DatasetSource, FedSatOverrides, Method, ModelConfig, OutputConfig, RunConfig};
pub use metrics::{
    csv_header, emit_metrics, read_metrics_csv, read_round_logs, write_metrics_csv, write_round_logs, MetricsRecord, RoundLog,
    CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, ROUNDS_FILE,
};
pub use plan::{plan_round, RoundPlan};
pub use run::{evaluate_global, prepare_data, run, run_prepared, run_to_dir, PreparedData, RunOutput};
