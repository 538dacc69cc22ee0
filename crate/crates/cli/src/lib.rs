//! Command-line front end: config files, the prepare/train/evaluate pipeline, sweeps and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod reference;
pub mod report;
pub mod sweep;
