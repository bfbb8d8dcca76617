//! Experiment presets, run orchestration, aggregation and smoothing of
//! training curves, and the oracle check suites.

pub mod aggregate;
pub mod checks;
pub mod experiments;
pub mod preset;
pub mod run;
pub mod smooth;

pub use aggregate::{aggregate, mean_std, MetricsTable, Summary, SummaryRow, WinRate, FINAL_WINDOW};
pub use checks::{run_all, CheckOutcome};
pub use experiments::{compare, debug_match, emit_plot_script, run_grid, sweep_users, user_counts, SweepRow};
pub use preset::{agent_seed, ExperimentPreset, RunSpec, PRESET_NAMES, TRAIN_ENV_PREFIX};
pub use run::{execute, parallel_map, rerun, Manifest, RunOptions, RunOutput, MANIFEST_SCHEMA_VERSION};
pub use smooth::{downsample, smooth};
