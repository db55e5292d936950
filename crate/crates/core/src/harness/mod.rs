//! Seeded Monte-Carlo experiments and the acceptance suite.
//!
//! An experiment sweeps one system parameter over a grid. Every
//! `(grid point, trial)` pair draws its channels from a seed derived from the
//! master seed, runs the requested variants, recovers rank-one beamformers
//! and evaluates the rates on the true channels. Rows are sorted before they
//! are written, so the output is byte-identical for a fixed master seed
//! regardless of thread scheduling.

pub mod acceptance;
mod runner;
mod spec;

pub use runner::{
    ci95, evaluate_variant, residuals, run_experiment, srm_options, summarize, trial_data,
    v0_path_name, Evaluated, ExperimentResult, RunRecord, Summary, SummaryCell, TraceRow,
    TrialData, TrialRow,
};
pub use spec::{
    config_with_overrides, derive_seed, ExperimentKind, ExperimentSpec, OutputSpec, RunOptions,
};
