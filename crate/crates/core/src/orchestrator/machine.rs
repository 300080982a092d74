//! The detection state machine, free of detector and classifier state so it
//! can be driven directly by abstract inputs.

use serde::{Deserialize, Serialize};

use super::query::QueryGenerator;
use crate::detector::VerificationResult;
use crate::event::{
    Command, CommandKind, DetectionEvent, DetectionMethod, Modality, QueryExchange, QueryOutcome, RobotStatus, SayRole,
    Timestamp,
};
use crate::intent::Polarity;

pub const APOLOGY: &str = "I'm sorry, let me fix that.";

/// A signal counts only if the robot is moving or stopped at most this long ago.
pub const GATE_WINDOW_MILLIS: u64 = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Implicit and explicit detection.
    #[default]
    Proactive,
    /// Explicit reports only.
    Reactive,
}

/// A phase-one candidate with the robot context it fired in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotentialError {
    pub t_signal: Timestamp,
    pub modality: Modality,
    pub context: RobotStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Pass,
    Ignore,
}

/// Gripper state is carried in the context but never vetoes.
pub fn context_gate(p: &PotentialError) -> GateDecision {
    if p.context.moving || p.context.millis_since_last_movement <= GATE_WINDOW_MILLIS {
        GateDecision::Pass
    } else {
        GateDecision::Ignore
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase {
    Monitoring,
    AwaitingVerification { potential: PotentialError, query_sent_at: Timestamp, query: String },
    Recovering { since: Timestamp },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Monitoring => "monitoring",
            Phase::AwaitingVerification { .. } => "awaiting_verification",
            Phase::Recovering { .. } => "recovering",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Candidate(PotentialError),
    Response { t: Timestamp, polarity: Polarity },
    ExplicitReport { t: Timestamp },
    RecoveryComplete { t: Timestamp },
    /// Time passes; only checks the verification deadline.
    Tick { t: Timestamp },
}

impl Input {
    pub fn t(&self) -> Timestamp {
        match self {
            Input::Candidate(p) => p.t_signal,
            Input::Response { t, .. }
            | Input::ExplicitReport { t }
            | Input::RecoveryComplete { t }
            | Input::Tick { t } => *t,
        }
    }
}

/// What happened to a phase-one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFate {
    Accepted,
    GatedOut,
    /// Another verification or a recovery was in progress.
    Busy,
    /// Implicit detection is off in reactive mode.
    Disabled,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transition {
    pub commands: Vec<Command>,
    pub detection: Option<DetectionEvent>,
    /// Feedback for the AU detector's vote threshold.
    pub verification: Option<VerificationResult>,
    pub exchanges: Vec<QueryExchange>,
    pub candidate: Option<CandidateFate>,
}

impl Transition {
    fn absorb(&mut self, other: Transition) {
        self.commands.extend(other.commands);
        if other.detection.is_some() {
            debug_assert!(self.detection.is_none());
            self.detection = other.detection;
        }
        self.verification = other.verification.or(self.verification);
        self.exchanges.extend(other.exchanges);
        self.candidate = other.candidate.or(self.candidate);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineState {
    pub phase: Phase,
    pub mode: Mode,
    /// Whether the robot is held by a Pause with no Resume yet.
    pub paused: bool,
    pub verification_timeout_ms: u64,
    queries: QueryGenerator,
}

impl EngineState {
    pub fn new(mode: Mode, verification_timeout_ms: u64, queries: QueryGenerator) -> Self {
        Self { phase: Phase::Monitoring, mode, paused: false, verification_timeout_ms, queries }
    }

    pub fn query_pending(&self) -> bool {
        matches!(self.phase, Phase::AwaitingVerification { .. })
    }

    pub fn queries_issued(&self) -> u64 {
        self.queries.issued()
    }

    /// Advances the machine by one input. Any input first expires an
    /// overdue verification.
    pub fn apply(&mut self, input: &Input) -> Transition {
        let mut tr = self.expire(input.t());
        let next = match input {
            Input::Tick { .. } => Transition::default(),
            Input::Candidate(p) => self.on_candidate(p),
            Input::Response { t, polarity } => self.on_response(*t, *polarity),
            Input::ExplicitReport { t } => self.on_explicit(*t),
            Input::RecoveryComplete { t } => self.on_recovery_complete(*t),
        };
        tr.absorb(next);
        tr
    }

    fn expire(&mut self, now: Timestamp) -> Transition {
        let Phase::AwaitingVerification { query_sent_at, potential, query } = &self.phase else {
            return Transition::default();
        };
        if now - *query_sent_at <= self.verification_timeout_ms as i64 {
            return Transition::default();
        }
        let exchange = QueryExchange {
            t: now,
            asked_at: *query_sent_at,
            query: query.clone(),
            modality: potential.modality,
            outcome: QueryOutcome::TimedOut,
        };
        self.phase = Phase::Monitoring;
        self.paused = false;
        Transition {
            commands: vec![Command::new(now, CommandKind::Resume)],
            exchanges: vec![exchange],
            ..Default::default()
        }
    }

    fn on_candidate(&mut self, p: &PotentialError) -> Transition {
        let fate = if self.mode == Mode::Reactive {
            CandidateFate::Disabled
        } else if self.phase != Phase::Monitoring {
            CandidateFate::Busy
        } else if context_gate(p) == GateDecision::Ignore {
            CandidateFate::GatedOut
        } else {
            CandidateFate::Accepted
        };
        if fate != CandidateFate::Accepted {
            return Transition { candidate: Some(fate), ..Default::default() };
        }
        let t = p.t_signal;
        let query = self.queries.next_query();
        self.phase = Phase::AwaitingVerification { potential: p.clone(), query_sent_at: t, query: query.clone() };
        self.paused = true;
        Transition {
            commands: vec![
                Command::new(t, CommandKind::Pause),
                Command::new(t, CommandKind::Say { text: query, role: SayRole::Query }),
            ],
            candidate: Some(fate),
            ..Default::default()
        }
    }

    fn on_response(&mut self, t: Timestamp, polarity: Polarity) -> Transition {
        let Phase::AwaitingVerification { potential, query_sent_at, query } = &self.phase else {
            return Transition::default();
        };
        let mut exchange = QueryExchange {
            t,
            asked_at: *query_sent_at,
            query: query.clone(),
            modality: potential.modality,
            outcome: QueryOutcome::Confirmed,
        };
        match polarity {
            Polarity::Unclear => Transition::default(),
            Polarity::Negative => {
                let detection = DetectionEvent {
                    t_detected: t,
                    method: DetectionMethod::from(potential.modality),
                    t_signal: potential.t_signal,
                    verified: true,
                    matched_error_id: None,
                };
                self.phase = Phase::Recovering { since: t };
                Transition {
                    commands: vec![
                        Command::new(t, CommandKind::Say { text: APOLOGY.into(), role: SayRole::Apology }),
                        Command::new(t, CommandKind::Recover),
                    ],
                    detection: Some(detection),
                    verification: Some(VerificationResult::ErrorConfirmed),
                    exchanges: vec![exchange],
                    candidate: None,
                }
            }
            Polarity::Affirmative => {
                exchange.outcome = QueryOutcome::Dismissed;
                self.phase = Phase::Monitoring;
                self.paused = false;
                Transition {
                    commands: vec![Command::new(t, CommandKind::Resume)],
                    verification: Some(VerificationResult::NoError),
                    exchanges: vec![exchange],
                    ..Default::default()
                }
            }
        }
    }

    fn on_explicit(&mut self, t: Timestamp) -> Transition {
        let mut tr = Transition::default();
        if let Phase::AwaitingVerification { potential, query_sent_at, query } = &self.phase {
            tr.exchanges.push(QueryExchange {
                t,
                asked_at: *query_sent_at,
                query: query.clone(),
                modality: potential.modality,
                outcome: QueryOutcome::Preempted,
            });
        }
        if !self.paused {
            tr.commands.push(Command::new(t, CommandKind::Pause));
            self.paused = true;
        }
        tr.commands.push(Command::new(t, CommandKind::Say { text: APOLOGY.into(), role: SayRole::Apology }));
        tr.commands.push(Command::new(t, CommandKind::Recover));
        tr.detection = Some(DetectionEvent {
            t_detected: t,
            method: DetectionMethod::Explicit,
            t_signal: t,
            verified: false,
            matched_error_id: None,
        });
        self.phase = Phase::Recovering { since: t };
        tr
    }

    fn on_recovery_complete(&mut self, t: Timestamp) -> Transition {
        if !matches!(self.phase, Phase::Recovering { .. }) {
            return Transition::default();
        }
        self.phase = Phase::Monitoring;
        self.paused = false;
        Transition { commands: vec![Command::new(t, CommandKind::Resume)], ..Default::default() }
    }
}
