//! Configuration handling for the `rattle` command-line tool.

pub mod config;
