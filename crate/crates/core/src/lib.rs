//! Error-aware interaction engine for human-robot collaboration.

pub mod detector;
pub mod event;
pub mod harness;
pub mod intent;
pub mod orchestrator;
pub mod robot;
