//! File formats, reports and the `pgcompat` command line over `pgcompat-core`.

pub mod cli;
pub mod format;
pub mod report;

pub use cli::{execute, run, Args, CliError, Command, Outcome, OutputFormat, RunConfig};
pub use report::{Fields, Quantity, Report, Run, SCHEMA_VERSION};
