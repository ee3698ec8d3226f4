//! Library side of the `privfed` binary: the experiment config and one
//! function per subcommand.

pub mod commands;
pub mod config;

pub use config::{ConfigError, ExperimentConfig};
