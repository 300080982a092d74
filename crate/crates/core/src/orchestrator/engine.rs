use std::sync::Arc;

use super::config::EngineConfig;
use super::machine::{CandidateFate, EngineState, Input, Phase, PotentialError, Transition};
use super::query::QueryGenerator;
use super::EngineError;
use crate::detector::{AuDetector, FlagRecord, FrameOutcome};
use crate::event::{Command, DetectionEvent, EventEnvelope, Modality, Payload, QueryExchange, RobotStatus, Speaker};
use crate::intent::{Intent, IntentBackend};

/// Everything one envelope produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub commands: Vec<Command>,
    pub detection: Option<DetectionEvent>,
    pub exchanges: Vec<QueryExchange>,
    pub intent: Option<Intent>,
    pub frame: Option<FrameOutcome>,
    pub candidate: Option<CandidateFate>,
}

impl StepOutput {
    fn absorb(&mut self, tr: Transition) {
        self.commands.extend(tr.commands);
        self.detection = tr.detection.or(self.detection.take());
        self.exchanges.extend(tr.exchanges);
        self.candidate = tr.candidate.or(self.candidate);
    }

    /// Outputs as envelopes, in emission order.
    pub fn envelopes(&self) -> impl Iterator<Item = EventEnvelope> + '_ {
        self.commands
            .iter()
            .cloned()
            .map(Payload::Command)
            .chain(self.exchanges.iter().cloned().map(Payload::QueryExchange))
            .chain(self.detection.iter().cloned().map(Payload::Detection))
            .map(EventEnvelope::new)
    }
}

/// The event loop's single consumer: owns the AU detector, the intent
/// backend, and the detection state machine.
pub struct Engine {
    config: EngineConfig,
    state: EngineState,
    detector: AuDetector,
    intents: Arc<dyn IntentBackend>,
    latest_status: Option<RobotStatus>,
    flags: Vec<FlagRecord>,
}

impl Engine {
    pub fn new(config: EngineConfig, intents: Arc<dyn IntentBackend>) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = config.query_pool()?;
        let detector = AuDetector::new(config.detector.clone())?;
        let state = EngineState::new(config.mode, config.verification_timeout_ms, QueryGenerator::new(pool, config.seed));
        Ok(Self { config, state, detector, intents, latest_status: None, flags: Vec::new() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn phase(&self) -> &Phase {
        &self.state.phase
    }

    pub fn detector(&self) -> &AuDetector {
        &self.detector
    }

    pub fn flag_records(&self) -> &[FlagRecord] {
        &self.flags
    }

    pub fn step(&mut self, event: &EventEnvelope) -> Result<StepOutput, EngineError> {
        let t = event.t;
        let mut out = StepOutput::default();
        match &event.payload {
            Payload::RobotStatus(status) => {
                status.validate()?;
                self.latest_status = Some(status.clone());
                self.drive(&Input::Tick { t }, &mut out);
                if status.recovery_complete {
                    self.drive(&Input::RecoveryComplete { t }, &mut out);
                }
            }
            Payload::AuFrame(frame) => {
                self.drive(&Input::Tick { t }, &mut out);
                let outcome = self.detector.process_frame(frame)?;
                self.flags.push(outcome.record());
                out.frame = Some(outcome);
                if let Some(t_signal) = outcome.candidate {
                    let p = self.potential(t_signal, Modality::Au);
                    self.drive(&Input::Candidate(p), &mut out);
                }
            }
            Payload::Utterance(u) => {
                u.validate()?;
                self.drive(&Input::Tick { t }, &mut out);
                if u.speaker == Speaker::Robot {
                    return Ok(out);
                }
                let intent = self.intents.classify(u, self.state.query_pending());
                let input = match &intent {
                    Intent::QueryResponse { polarity, .. } => Some(Input::Response { t, polarity: *polarity }),
                    Intent::ExplicitErrorReport { .. } => Some(Input::ExplicitReport { t }),
                    Intent::ImplicitErrorReaction { .. } => Some(Input::Candidate(self.potential(t, Modality::Speech))),
                    Intent::ActionRequest { .. } | Intent::Irrelevant => None,
                };
                tracing::debug!(%t, text = %u.text, ?intent, "utterance classified");
                out.intent = Some(intent);
                if let Some(input) = input {
                    self.drive(&input, &mut out);
                }
            }
            other => return Err(EngineError::UnexpectedKind(other.kind_name())),
        }
        Ok(out)
    }

    fn drive(&mut self, input: &Input, out: &mut StepOutput) {
        let tr = self.state.apply(input);
        if let Some(result) = tr.verification {
            self.detector.adapt_after_verification(result, input.t());
        }
        if let Some(fate) = tr.candidate {
            tracing::debug!(t = %input.t(), ?fate, "candidate");
        }
        out.absorb(tr);
    }

    fn potential(&self, t_signal: crate::event::Timestamp, modality: Modality) -> PotentialError {
        let context = self
            .latest_status
            .clone()
            .unwrap_or_else(|| RobotStatus::idle(crate::event::Timestamp::ZERO, t_signal.0));
        PotentialError { t_signal, modality, context }
    }
}
