use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fedsat::gradcheck::{run_gradcheck, GradcheckConfig};
use fedsat::harness::{prepare_data, run_to_dir, Method, RunConfig};

#[derive(Parser)]
#[command(name = "fedsat", version, about = "Federated learning simulator with prioritized class-weighted aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write metrics into the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// fedsat, fedavg or scaffold.
        #[arg(long)]
        method: Option<Method>,
        /// Defaults to output.dir from the config, else ./runs/<method>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rayon worker threads (overrides the config).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print per-client class histograms as JSON.
    PartitionInspect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            method,
            out,
            threads,
        } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let dir = out
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.method, cfg.master_seed)));
            let res = run_to_dir(&cfg, &dir)?;
            for log in &res.logs {
                for ex in &log.excluded {
                    eprintln!("round {}: excluded client {} ({})", log.round, ex.client_id, ex.reason);
                }
            }
            println!(
                "{} seed {}: final accuracy {:.4}, best {:.4} at round {}; outputs in {}",
                cfg.method,
                cfg.master_seed,
                res.final_accuracy(),
                res.best_accuracy,
                res.best_round,
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::PartitionInspect { config } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let data = prepare_data(&cfg)?;
            let manifests: Vec<_> = data.shards.iter().map(|s| s.manifest()).collect();
            println!("{}", serde_json::to_string_pretty(&manifests)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { probes, seed } => {
            let cfg = GradcheckConfig {
                probes_per_layer: probes,
                seed,
                ..Default::default()
            };
            let reports = run_gradcheck(&cfg)?;
            let mut ok = true;
            for r in &reports {
                for l in &r.layers {
                    println!("{:?} layer {}: {} probes, max rel err {:.3e}", r.loss, l.layer, l.probes, l.max_rel_err);
                }
                ok &= r.passed();
            }
            println!("{}", if ok { "gradcheck passed" } else { "gradcheck FAILED" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
