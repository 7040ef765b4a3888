//! Command implementations behind the `flmm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod study;
