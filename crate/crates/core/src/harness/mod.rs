//! Datasets, checkpoints, configuration and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod formats;
