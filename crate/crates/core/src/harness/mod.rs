//! Experiment orchestration and file formats behind the `hawkes` CLI.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use experiment::{
    read_metrics_csv, replicate_seed, run_cell, run_experiment, scan_edges, select_edges, summarize,
    write_metrics_csv, EdgeRecord,
    EdgeSubset, Method, MetricsRow, ReplicateOutcome, TestSettings,
};
