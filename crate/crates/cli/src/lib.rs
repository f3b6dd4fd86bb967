//! Command-line front end: validated run configs, CSV and SVG artifacts and
//! run manifests that reproduce their CSVs byte for byte.

pub mod app;
pub mod config;
pub mod error;
pub mod output;

pub use app::{load_config, main_with, run, Cli, RunOutcome};
pub use config::{Command, GridSpec, RunConfig};
pub use error::CliError;
pub use output::RunManifest;
