use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Category, Intent, IntentBackend, RuleBasedBackend};
use crate::event::Utterance;

pub const DEFAULT_DEADLINE: Duration = Duration::from_millis(2000);

/// Request body sent to an external classifier. The response body is an
/// [`Intent`] in its `{category, payload}` form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub text: String,
    pub task: String,
    pub query_pending: bool,
}

/// Adapter for an external classification service, e.g. a language model
/// behind a small HTTP shim.
///
/// Transport errors, deadline misses, and contract violations all fall back
/// to the reference rules.
pub struct ServiceBackend {
    endpoint: String,
    agent: ureq::Agent,
    fallback: RuleBasedBackend,
}

impl ServiceBackend {
    pub fn new(endpoint: impl Into<String>, deadline: Duration, fallback: RuleBasedBackend) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(deadline))
            .http_status_as_error(true)
            .build()
            .into();
        Self { endpoint: endpoint.into(), agent, fallback }
    }

    pub fn request(&self, utterance: &Utterance, query_pending: bool) -> Result<Intent, String> {
        let body = BackendRequest {
            text: utterance.text.clone(),
            task: self.fallback.lexicon().task_name.clone(),
            query_pending,
        };
        let intent: Intent = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| e.to_string())?;
        if intent.category() == Category::QueryResponse && !query_pending {
            return Err("service returned a query response with no query pending".into());
        }
        Ok(intent)
    }
}

impl IntentBackend for ServiceBackend {
    fn classify(&self, utterance: &Utterance, query_pending: bool) -> Intent {
        match self.request(utterance, query_pending) {
            Ok(intent) => intent,
            Err(reason) => {
                tracing::warn!(endpoint = %self.endpoint, %reason, "intent service failed, using rules");
                self.fallback.classify(utterance, query_pending)
            }
        }
    }

    fn name(&self) -> &str {
        "service"
    }
}
