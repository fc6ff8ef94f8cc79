//! Configuration, orchestration, persistence and aggregation for the `kc`
//! experiment runner.

pub mod aggregate;
pub mod config;
pub mod experiments;
pub mod manifest;

pub use aggregate::{aggregate, aggregate_tables, AggregateError, ColumnSummary, Summary};
pub use config::{validate, validate_config, ConfigError, Experiment, ExperimentConfig, RawConfig, ValidationReport};
pub use experiments::{run_experiment, Ctx, RunError, RunFailure};
pub use manifest::{RunManifest, MANIFEST_FILE};
