//! Pipelines behind the `contextdesc` binary.

pub mod commands;
pub mod config;
