//! Experiment driver for rectified-flow toy studies: TOML configs, named
//! presets, and CSV/JSON artifacts for plotting.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod presets;

pub use config::{BackendConfig, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use experiment::{compare_schedules, l2_penalty_sweep, run, RunOutcome};
pub use presets::{preset, PRESETS};
