//! Experiment runner: JSON configs in, sweeps over the bound and estimator
//! library, report.json / bounds.csv / SVG plots out.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod output;
pub mod plot;

/// Exit code for a run in which some sweep cell failed.
pub const EXIT_CELL_FAILED: i32 = 1;
/// Exit code for an unreadable or invalid configuration.
pub const EXIT_INVALID_CONFIG: i32 = 2;

/// Environment variable giving the default output directory.
pub const OUT_DIR_ENV: &str = "KOOPBOUND_OUT_DIR";
