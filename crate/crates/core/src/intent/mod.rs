//! Utterance classification into the five interaction categories.
//!
//! [`RuleBasedBackend`] is the deterministic reference. [`ServiceBackend`]
//! forwards to an external classifier over HTTP and falls back to the rules on
//! any failure or deadline miss.

mod lexicon;
mod rules;
mod service;
pub mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{ActionPattern, TaskLexicon};
pub use rules::RuleBasedBackend;
pub use service::{BackendRequest, ServiceBackend, DEFAULT_DEADLINE};

use crate::event::Utterance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Everything is fine.
    Affirmative,
    /// Something is wrong.
    Negative,
    Unclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    ActionRequest,
    ExplicitErrorReport,
    QueryResponse,
    ImplicitErrorReaction,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "category", content = "payload", rename_all = "snake_case")]
pub enum Intent {
    ActionRequest {
        action: String,
        #[serde(default)]
        parameters: BTreeMap<String, String>,
    },
    ExplicitErrorReport {
        description: String,
    },
    QueryResponse {
        polarity: Polarity,
        #[serde(default)]
        supplemental: Option<String>,
    },
    ImplicitErrorReaction {
        #[serde(default)]
        marker: Option<String>,
    },
    Irrelevant,
}

impl Intent {
    pub fn category(&self) -> Category {
        match self {
            Intent::ActionRequest { .. } => Category::ActionRequest,
            Intent::ExplicitErrorReport { .. } => Category::ExplicitErrorReport,
            Intent::QueryResponse { .. } => Category::QueryResponse,
            Intent::ImplicitErrorReaction { .. } => Category::ImplicitErrorReaction,
            Intent::Irrelevant => Category::Irrelevant,
        }
    }
}

/// Anything that can turn a human utterance into an [`Intent`].
///
/// Implementations must be total: unknown text maps to `Irrelevant`, and
/// `QueryResponse` is only returned when `query_pending` is set.
pub trait IntentBackend: Send + Sync {
    fn classify(&self, utterance: &Utterance, query_pending: bool) -> Intent;

    fn name(&self) -> &str;
}

#[derive(Debug, Error)]
pub enum IntentError {
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("reading {path}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
