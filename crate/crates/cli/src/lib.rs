//! Configuration-driven runner for the erosion experiments.
//!
//! A run reads one JSON config (a bundled preset or a file), executes it
//! over `n_seeds` seeds and writes metric CSVs, `summary.json` and
//! `manifest.json` into its output directory.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod run;

pub use compare::{compare, Comparison};
pub use config::{ExperimentConfig, ExperimentKind};
pub use error::CliError;
pub use run::{run, ConfigSource, RunOutcome, RunRequest, PRESETS};
