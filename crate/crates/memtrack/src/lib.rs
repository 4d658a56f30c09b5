//! File formats, configuration, parallel execution and the command line for
//! [`memtrack_core`].
//!
//! * [`store`]: versioned binary datasets and checkpoints, CSV/JSON reports
//! * [`config`]: sectioned `key = value` experiment files
//! * [`exec`]: rayon-backed executor for per-sequence work
//! * [`cli`]: the `memtrack` commands

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod store;

pub use error::{CliError, ConfigError, StoreError};
