//! Experiment orchestration: named presets, flat TOML configuration,
//! self-describing run directories and figure tables.

pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod run;

pub use error::{LabError, LabResult};
