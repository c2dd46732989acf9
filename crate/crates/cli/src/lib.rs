//! Scenario runner for the `cfkalman` filters.
//!
//! A scenario file fixes the model, measurement channel, initial belief and
//! time grid. The commands simulate it, filter it, solve its stationary
//! covariance equations or check the characteristic-function identities on
//! it, writing plot-ready CSV/JSON files into an output directory.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{cmd_filter, cmd_simulate, cmd_stationary, cmd_verify, Check, RunOptions};
pub use error::{CliError, CliResult};
pub use scenario::{load_scenario, Overrides, Scenario, Setup};
