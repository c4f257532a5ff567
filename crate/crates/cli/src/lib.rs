//! Experiment runner: TOML configuration, leave-one-subject-out grids over
//! seeds and strategies, parameter sweeps and report files.

pub mod config;
pub mod error;
pub mod experiment;
pub mod sweep;

pub use config::{parse_config, BackboneConfig, DataConfig, ExperimentConfig, Precision};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, write_outputs, CellResult, ExperimentOutput};
pub use sweep::{run_sweep, SweepParam, SweepRow};
