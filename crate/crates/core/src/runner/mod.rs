//! Configuration, experiment orchestration and report emission.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod qonly;
pub mod report;

pub use config::{
    load_experiment, load_problem, load_scenario, load_scenario_file, scenario_to_toml, DrawConfig, ExperimentConfig,
    ProblemConfig, QOnlyConfig, Scheme,
};
pub use experiment::{draw_users, evaluate, run_experiment, run_scheme, trial_scenario, Evaluation};
pub use report::{emit_report, MethodSummary, Report, Summary, TrialRecord, UserRecord};
