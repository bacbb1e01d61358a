//! Library surface of the command-line tool: configuration, deterministic
//! run construction, the grid sweep, and reporting. The `adaptsim` binary
//! is a thin dispatcher over these modules.

pub mod config;
pub mod grid;
pub mod report;
pub mod runner;
