//! Command-line tool and HTTP service around `ragcheck-core`.

pub mod backend;
pub mod cli;
pub mod config;
pub mod service;

pub use cli::{run, Cli, Failure};
