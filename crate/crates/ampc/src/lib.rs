//! Command-line tool, file formats and threading for `ampc-core`.
pub mod cli;
pub mod clock;
pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
pub mod manifest;
