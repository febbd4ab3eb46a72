//! Ensemble orchestration, run directories, diagnostics and reports.

pub mod analyze;
pub mod artifacts;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod report;

pub use config::RunConfig;
pub use error::{Result, RunError};
pub use mvflow_core as core;
