//! Deterministic federated-learning simulator with contribution-based,
//! budget-constrained token incentives.
//!
//! Clients solve a convex dual subproblem on their local data and upload a
//! model delta. The aggregator values each delta with truncated Monte-Carlo
//! Shapley estimates, aggregates the best `|Q|` of them, pays tokens from a
//! fixed budget and records every payment in a hash-chained ledger.
//!
//! Modules map onto the pipeline:
//!
//! - [`data`]: datasets, partitions, label-flip attacks
//! - [`learning`]: primal/dual objectives and the local solver
//! - [`valuation`]: utilities and Shapley estimation
//! - [`scheduler`]: per-round orchestration and baselines
//! - [`tokenomics`]: token issuance under a budget
//! - [`ledger`]: the transaction chain
//! - [`config`], [`harness`], [`metrics`]: experiment driving

// `!(x > 0.0)` style checks are kept so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod learning;
pub mod ledger;
pub mod metrics;
pub mod rng;
pub mod scheduler;
pub mod tokenomics;
pub mod valuation;

pub use config::{load_config, ExperimentConfig};
pub use error::{Error, Result};
pub use harness::{run, sweep, RunOutput, RunSummary, SweepAxis};
pub use rng::{Purpose, RngStream};
