//! Experiment runner for the prefill simulator: config loading, runs, sweeps, calibration
//! and trace generation, with CSV/JSON artifacts written atomically.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_calibrate, cmd_gen_trace, cmd_run, cmd_sweep};
pub use config::{ExperimentConfig, Overrides};
