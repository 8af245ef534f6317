//! Run configuration, data preparation and the command implementations
//! behind the `exost` binary.

pub mod commands;
pub mod config;
pub mod prepare;
pub mod report;

pub use commands::*;
pub use config::{DataConfig, RunConfig};
pub use prepare::{load_data, prepare, prepare_panel, Prepared};
pub use report::{render_table, write_table, MetricsRow};
