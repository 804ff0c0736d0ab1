//! Configuration-driven runner for the form-bounded drift laboratory:
//! experiment configs, result records, plot tables and the acceptance battery.

pub mod config;
pub mod error;
pub mod experiments;
pub mod plotdata;
pub mod record;
pub mod runner;
pub mod verify;

pub use config::{ExperimentConfig, Kind, Overrides};
pub use error::{CliError, CliResult, ErrorReport};
pub use record::ResultRecord;
pub use runner::{run, RunOutput};
pub use verify::{verify, Suite};
