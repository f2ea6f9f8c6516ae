//! Configuration, commands and reports behind the `pading` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod verify;

pub use commands::{cmd_ablate, cmd_export, cmd_run, cmd_synth_data, load_inputs};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use report::{AblationReport, RunReport, SCHEMA_VERSION};
