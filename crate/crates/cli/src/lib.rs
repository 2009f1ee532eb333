//! Batch driver for the testers: flags or a JSON config in, JSON or CSV
//! reports out.

pub mod args;
pub mod config;
pub mod error;
pub mod run;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use run::{run_experiment, RunOutcome};
