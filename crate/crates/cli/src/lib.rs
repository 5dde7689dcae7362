//! Library surface of the command-line front end, exposed so
//! integration tests can drive config parsing and output formatting
//! directly.

pub mod commands;
pub mod config;
pub mod output;
