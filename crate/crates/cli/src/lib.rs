//! Operator surface for occufield: configuration, pipeline stages and the
//! `occufield` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::run_command;
pub use config::{CoarseSource, PipelineConfig, RunConfig, StopAfter};
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, run_sweep, PipelineReport};
