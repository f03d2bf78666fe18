//! Experiment configs, records, reports and the acceptance registry.

pub mod acceptance;
pub mod config;
pub mod record;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, TargetSpec};
pub use record::ExperimentRecord;
pub use report::{report, ReportFormat};
pub use run::{execute, run};
