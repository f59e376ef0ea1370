//! Command implementations behind the `mobipose` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod score_map;
pub mod workspace;
