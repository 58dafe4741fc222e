//! File formats and subcommands of the `pmsutil` command-line tool.

pub mod commands;
pub mod config;
pub mod io;
