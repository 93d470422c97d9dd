//! Configuration, artifact formats and experiment orchestration for the
//! `mpnode` binary.

pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use config::{load_config, parse_config, Experiment, RunConfig};
pub use error::CliError;
pub use run::{run, RunSummary};
