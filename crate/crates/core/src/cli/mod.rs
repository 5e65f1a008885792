//! Configuration-driven experiment runs.

pub mod config;
pub mod runner;

pub use config::{
    load_config, parse_config, ExperimentKind, OutputFormat, RunConfig, Seeds, DEFAULT_REPLICATES,
};
pub use runner::{config_hash, execute, exit_code, run, write_atomic, Outcome, RunManifest, MANIFEST_FILE, SUMMARY_FILE};
