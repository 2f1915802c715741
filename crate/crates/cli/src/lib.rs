//! Command-line front end: experiment and providers files, the run store and
//! the `qexec` subcommands.

pub mod app;
pub mod config;
pub mod store;
