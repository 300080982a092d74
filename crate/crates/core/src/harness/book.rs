//! Ground truth bookkeeping: when each injected error occurred and which
//! detection, if any, resolved it.

use std::collections::BTreeMap;

use super::metrics::{Aggregates, ErrorOutcome, RunMetrics};
use super::scenario::{ErrorKind, Scenario};
use crate::event::{CommandKind, DetectionEvent, DetectionMethod, EventEnvelope, Payload, SayRole, Timestamp};

/// Detections further than this from an error's occurrence never match it.
pub const MATCH_HORIZON_MILLIS: u64 = 30_000;

#[derive(Debug, Clone)]
struct ErrorRecord {
    error_id: String,
    kind: ErrorKind,
    perceived: bool,
    occurred: Option<Timestamp>,
    detection: Option<DetectionEvent>,
}

#[derive(Debug, Clone)]
pub struct ErrorBook {
    errors: Vec<ErrorRecord>,
    by_action: BTreeMap<String, usize>,
    queries: usize,
    false_positive_queries: usize,
    unmatched: usize,
    implicit_au: usize,
    implicit_speech: usize,
}

impl ErrorBook {
    pub fn new(scenario: &Scenario) -> Self {
        let errors = scenario
            .errors
            .iter()
            .map(|e| ErrorRecord {
                error_id: e.error_id.clone(),
                kind: e.kind,
                perceived: scenario.perceives(&e.error_id),
                occurred: None,
                detection: None,
            })
            .collect();
        let by_action = scenario.errors.iter().enumerate().map(|(i, e)| (e.action.clone(), i)).collect();
        Self {
            errors,
            by_action,
            queries: 0,
            false_positive_queries: 0,
            unmatched: 0,
            implicit_au: 0,
            implicit_speech: 0,
        }
    }

    pub fn error_id(&self, index: usize) -> &str {
        &self.errors[index].error_id
    }

    pub fn is_perceived(&self, index: usize) -> bool {
        self.errors[index].perceived
    }

    pub fn is_resolved(&self, index: usize) -> bool {
        self.errors[index].detection.is_some()
    }

    fn open(&self, e: &ErrorRecord, t: Timestamp) -> bool {
        e.detection.is_none()
            && e.occurred.is_some_and(|occ| occ <= t && t.0 - occ.0 <= MATCH_HORIZON_MILLIS)
    }

    /// Whether a perceived error is still waiting for detection at `t`.
    pub fn unresolved_perceived(&self, t: Timestamp) -> bool {
        self.errors.iter().any(|e| e.perceived && self.open(e, t))
    }

    /// Books one trace envelope. Detections get their `matched_error_id`
    /// filled in. Returns the index of an error that occurred at this
    /// envelope.
    pub fn record(&mut self, env: &mut EventEnvelope) -> Option<usize> {
        match &mut env.payload {
            Payload::RobotStatus(s) => {
                let &i = self.by_action.get(s.current_action_id.as_deref()?)?;
                if self.errors[i].occurred.is_none() {
                    self.errors[i].occurred = Some(s.t);
                    return Some(i);
                }
            }
            Payload::Command(c) => {
                if let CommandKind::Say { role: SayRole::Query, .. } = c.kind {
                    self.queries += 1;
                    if !self.unresolved_perceived(c.t) {
                        self.false_positive_queries += 1;
                    }
                }
            }
            Payload::Detection(d) => {
                assert!(d.t_signal <= d.t_detected, "detection signalled after it was confirmed");
                match self.candidate_for(d) {
                    Some(i) => {
                        d.matched_error_id = Some(self.errors[i].error_id.clone());
                        self.errors[i].detection = Some(d.clone());
                        match d.method {
                            DetectionMethod::ImplicitAu => self.implicit_au += 1,
                            DetectionMethod::ImplicitSpeech => self.implicit_speech += 1,
                            DetectionMethod::Explicit => {}
                        }
                    }
                    None => {
                        d.matched_error_id = None;
                        self.unmatched += 1;
                    }
                }
            }
            _ => {}
        }
        None
    }

    /// Nearest unresolved error occurring at or before the signal, perceived
    /// errors first.
    fn candidate_for(&self, d: &DetectionEvent) -> Option<usize> {
        self.errors
            .iter()
            .enumerate()
            .filter(|(_, e)| self.open(e, d.t_signal))
            .max_by_key(|(_, e)| (e.perceived, e.occurred))
            .map(|(i, _)| i)
    }

    pub fn metrics(&self) -> RunMetrics {
        let per_error: Vec<ErrorOutcome> = self
            .errors
            .iter()
            .map(|e| {
                let delay = |t: Timestamp| e.occurred.map(|o| (t.0 - o.0) as f64 / 1000.0);
                ErrorOutcome {
                    error_id: e.error_id.clone(),
                    kind: e.kind,
                    perceived: e.perceived,
                    occurred_at: e.occurred,
                    detected: e.detection.is_some(),
                    method: e.detection.as_ref().map(|d| d.method),
                    t_signal: e.detection.as_ref().map(|d| d.t_signal),
                    t_detected: e.detection.as_ref().map(|d| d.t_detected),
                    delay_s: e.detection.as_ref().and_then(|d| delay(d.t_signal)),
                    confirm_delay_s: e.detection.as_ref().and_then(|d| delay(d.t_detected)),
                }
            })
            .collect();

        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let percent = |num: usize, den: usize| (den > 0).then(|| num as f64 * 100.0 / den as f64);
        let detected = per_error.iter().filter(|e| e.detected).count();
        let perceived = per_error.iter().filter(|e| e.perceived).count();
        let perceived_detected = per_error.iter().filter(|e| e.perceived && e.detected).count();
        let implicit = self.implicit_au + self.implicit_speech;

        let aggregates = Aggregates {
            mean_delay_s: mean(per_error.iter().filter_map(|e| e.delay_s).collect()),
            mean_confirm_delay_s: mean(per_error.iter().filter_map(|e| e.confirm_delay_s).collect()),
            percent_detected: percent(perceived_detected, perceived),
            implicit_share: percent(implicit, detected),
            implicit_au_share: percent(self.implicit_au, implicit),
            implicit_speech_share: percent(self.implicit_speech, implicit),
            false_positive_queries: self.false_positive_queries,
            query_count: self.queries,
            unmatched_detections: self.unmatched,
        };
        RunMetrics { per_error, aggregates }
    }
}

/// Recomputes metrics from a finished trace.
pub fn compute_metrics(scenario: &Scenario, trace: &[EventEnvelope]) -> RunMetrics {
    let mut book = ErrorBook::new(scenario);
    for env in trace {
        book.record(&mut env.clone());
    }
    book.metrics()
}
