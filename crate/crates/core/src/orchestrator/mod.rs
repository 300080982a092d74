//! Context gate, two-phase implicit detection, verification dialogue,
//! explicit reports, and mitigation commands.

mod config;
mod engine;
mod machine;
mod query;

use thiserror::Error;

pub use config::EngineConfig;
pub use engine::{Engine, StepOutput};
pub use machine::{
    context_gate, CandidateFate, EngineState, GateDecision, Input, Mode, Phase, PotentialError, Transition, APOLOGY,
    GATE_WINDOW_MILLIS,
};
pub use query::{forbidden_token, generate_query, QueryGenerator, QueryPool, FORBIDDEN_QUERY_TOKENS};

use crate::detector::DetectorError;
use crate::event::EventError;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading {path}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine does not accept {0} events as input")]
    UnexpectedKind(&'static str),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
