//! File formats, run directories and the command-line front end.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod pnm;
pub mod reports;
pub mod rundir;

pub use stylebind_core;
