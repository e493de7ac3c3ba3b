//! Statistics, configuration, persistence and experiment orchestration.

pub mod config;
pub mod format;
pub mod run;
pub mod stats;
