//! Simulation study: a virtual decision maker built from four driving styles
//! supplies prior comparisons, a primary decision maker built from the fifth
//! answers queries, and grid regret measures how fast each method finds the
//! primary decision maker's preferred planner parameters.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Method};
pub use run::{
    oracle_best_utility, run_experiment, simulated_primary_dm, ExperimentOutcome, ExperimentSummary, MethodSummary,
    RegretRecord, RunError, SimulatedDm,
};
