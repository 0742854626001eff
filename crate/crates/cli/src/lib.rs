//! Library side of the `foviq` command-line tool: configuration handling,
//! subcommand implementations, and pipeline orchestration.

pub mod commands;
pub mod config;
pub mod lock;
pub mod pipeline;
