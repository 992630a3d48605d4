//! End-to-end runner for phrase-prompted few-shot detection: configuration,
//! dataset loading, the per-image pipeline, the ablation suite, result dumps
//! and the `phrasedet` command line.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod dump;
pub mod error;
pub mod mockgen;
pub mod pipeline;
pub mod runner;

pub use config::{BackendSpec, RunConfig};
pub use dataset::{load_dataset, Dataset, SupportRecord};
pub use error::{CliError, Result};
pub use pipeline::{execute, ImageOutcome, RunOutput};
pub use runner::{open_backend, run_ablation_suite, run_pipeline, AblationSpec, ABLATIONS};
