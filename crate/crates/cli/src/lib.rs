//! Experiment driver for the two-pathway model: configuration, cached training,
//! figure sweeps and CSV metrics.

pub mod cli;
pub mod config;
pub mod lab;
pub mod metrics;
pub mod sweep;
