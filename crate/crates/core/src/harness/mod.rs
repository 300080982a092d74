//! Scenario files, the synthetic human, closed-loop runs and their metrics.

mod book;
mod compare;
mod human;
mod metrics;
mod run;
mod scenario;

use thiserror::Error;

pub use book::{compute_metrics, ErrorBook, MATCH_HORIZON_MILLIS};
pub use compare::{
    compare_configs, deltas, mean_of, reseeded, Comparison, Delta, NamedRun, SummaryRow, SweepGrid,
    write_summary_csv,
};
pub use human::{
    default_baseline_face, AuReaction, Burst, Face, HumanModel, HumanSampler, NoiseModel, NoiseSchedule,
    PolicyResponder, ReactionPlan, Response, ResponsePolicy, ResponseSource, SpokenReaction,
};
pub use metrics::{write_metrics_csv, Aggregates, ErrorOutcome, RunMetrics};
pub use run::{replay, run_scenario, run_scenario_with, RunOutput, STATUS_PERIOD_MILLIS};
pub use scenario::{ErrorKind, InjectedError, Scenario, SCHEMA_VERSION};

use crate::event::EventError;
use crate::orchestrator::EngineError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("error {error_id} is anchored to missing action {action}")]
    DanglingAnchor { error_id: String, action: String },
    #[error("invalid scenario at {pointer}: {message}")]
    Invalid { pointer: String, message: String },
    #[error("reading {path}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("{0}")]
    Invalid(String),
    #[error("replay diverged from the recorded trace at line {index}")]
    ReplayDivergence { index: usize },
}
