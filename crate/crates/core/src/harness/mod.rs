//! Experiment configuration, run orchestration and on-disk output.

pub mod compare;
pub mod config;
pub mod record;
pub mod run;
pub mod sim;

pub use compare::{compare_runs, default_levels, load_run, ComparisonTable, RunData};
pub use config::{ExperimentConfig, Preset, StatsConfig};
pub use record::TrajectoryRecord;
pub use run::{run_experiment, run_to_dir, write_run_dir, RunOutput, RunStatus};
pub use sim::Simulation;
