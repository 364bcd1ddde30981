//! Library surface of the CLI so that integration tests can drive commands
//! in-process.

pub mod commands;
pub mod compare;
pub mod config;
pub mod dataset_io;
pub mod synth;
