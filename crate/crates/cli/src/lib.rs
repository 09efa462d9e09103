//! Configuration, output handling and experiment drivers behind the
//! `kaclab` command line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
