//! Configuration files, scenario runs, sweeps, output files and the CLI.

pub mod cli;
pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;

pub use config::{
    generate_field, load_config, parse_config, ConfigError, DiagnosticsSpec, FieldSpec, GridSpec, InitialSpec,
    OutputSpec, RunConfig, SolverSpec, ThresholdSpec,
};
pub use output::{format_float, trajectory_csv, write_atomic, write_json, write_trajectory_csv};
pub use scenario::{
    default_scenario, default_scenarios, run_config, run_scenario, HarnessError, RunSummary, ScenarioRun,
};
pub use sweep::{load_sweep, parse_sweep, run_sweep, DerivedColumn, SweepAxis, SweepConfig, SweepRow, SweepTable};
