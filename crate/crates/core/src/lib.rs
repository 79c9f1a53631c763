//! Single-process simulator for federated learning with cost-sensitive local
//! training, worker-side statistical evaluation of client parameters and
//! prioritized class-weighted aggregation, alongside FedAvg and SCAFFOLD
//! baselines.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: IDX ingestion, synthetic blobs and the LS / LSMC / LQSMC partitioners.
//! - [`nn`]: the MLP substrate (forward, backward, losses, SGD, checkpoints).
//! - [`client`]: local training with drift correction and control-variate updates.
//! - [`worker`]: layer coefficients and class statistics computed on worker data.
//! - [`aggregation`]: statistical weight computation and the global update.
//! - [`baselines`]: FedAvg and SCAFFOLD rounds.
//! - [`harness`]: round planning, the run loop, configuration and metrics.

pub mod aggregation;
pub mod baselines;
pub mod client;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod worker;

pub use error::{Error, Result};
