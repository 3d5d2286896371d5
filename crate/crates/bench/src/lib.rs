//! Seeded Monte Carlo sweeps comparing the fluid-antenna NOMA optimizer
//! with fixed, random and orthogonal-access baselines.
//!
//! A run writes `trials.csv` (one row per seed, sweep point and method),
//! `summary.csv`, `manifest.json` and `timings.csv`. All but the timings are
//! byte-identical across reruns of the same config.

pub mod config;
pub mod error;
pub mod experiment;
pub mod records;
pub mod summary;

pub use config::{ExperimentConfig, Method, Sweep};
pub use error::{BenchError, Result};
pub use experiment::{run_experiment, run_trials, trial_seed};
pub use records::{read_trials, TrialRecord, TrialStatus};
pub use summary::{summarize, summarize_files, SummaryRow};
