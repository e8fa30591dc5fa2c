//! Experiment harness: configuration, datasets, metrics, the training
//! runner and the lemma verification suite behind the `unigen` CLI.

pub mod config;
pub mod data;
pub mod error;
pub mod lemmas;
pub mod metrics;
pub mod runner;

pub use config::{DatasetSpec, ExperimentConfig, ExperimentKind, MixtureSpec};
pub use error::{DataError, Error, Result};
pub use runner::{compare, run_experiment, RunOptions, RunRecord};
