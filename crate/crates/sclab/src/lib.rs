//! Experiment runner for self-consuming training loops.
//!
//! `sclab` reads a strict TOML config, dispatches to a scenario runner built
//! on `sclab_core`, and writes CSV tables plus a replayable manifest. The
//! [`checks`] module holds the oracle suites behind `sclab selftest` and the
//! acceptance target.

pub mod checks;
pub mod config;
pub mod output;
pub mod scenario;

pub use config::{parse_config, ConfigErrors, ExperimentConfig, Scenario};
pub use scenario::{execute, run_scenario, RunError, ScenarioOutput};

/// Exit status for a rejected config.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for a failure while running or writing results.
pub const EXIT_RUNTIME: i32 = 3;
