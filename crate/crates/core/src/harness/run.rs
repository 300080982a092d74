//! Closed-loop discrete-event run: robot sim, synthetic human and engine
//! advanced together on a logical millisecond clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::book::ErrorBook;
use super::human::{Face, HumanSampler, PolicyResponder, ResponseSource};
use super::metrics::RunMetrics;
use super::scenario::Scenario;
use super::HarnessError;
use crate::detector::FlagRecord;
use crate::event::{CommandKind, EventEnvelope, Payload, SayRole, Timestamp, Utterance};
use crate::intent::{IntentBackend, RuleBasedBackend};
use crate::orchestrator::{Engine, EngineConfig, Phase};
use crate::robot::RobotSim;

pub const STATUS_PERIOD_MILLIS: u64 = 100;

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Inputs and engine outputs in processing order.
    pub trace: Vec<EventEnvelope>,
    pub metrics: RunMetrics,
    pub flags: Vec<FlagRecord>,
    pub end: Timestamp,
}

/// Engine plus ground-truth book; the part shared by live runs and replays.
struct Recorder {
    engine: Engine,
    book: ErrorBook,
    trace: Vec<EventEnvelope>,
}

impl Recorder {
    fn new(scenario: &Scenario, config: &EngineConfig, intents: Arc<dyn IntentBackend>) -> Result<Self, HarnessError> {
        Ok(Self { engine: Engine::new(config.clone(), intents)?, book: ErrorBook::new(scenario), trace: Vec::new() })
    }

    /// Returns engine outputs (already in the trace) and any error that
    /// occurred at this input.
    fn feed(&mut self, mut input: EventEnvelope) -> Result<(Vec<EventEnvelope>, Option<usize>), HarnessError> {
        let occurred = self.book.record(&mut input);
        let out = self.engine.step(&input)?;
        self.trace.push(input);
        let mut emitted = Vec::new();
        for mut env in out.envelopes() {
            self.book.record(&mut env);
            self.trace.push(env.clone());
            emitted.push(env);
        }
        Ok((emitted, occurred))
    }

    fn finish(self, end: Timestamp) -> RunOutput {
        RunOutput {
            metrics: self.book.metrics(),
            flags: self.engine.flag_records().to_vec(),
            trace: self.trace,
            end,
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    text: String,
    /// Explicit reports are dropped if their error is already resolved.
    report_of: Option<usize>,
    noise: bool,
}

pub fn run_scenario(scenario: &Scenario, config: &EngineConfig) -> Result<RunOutput, HarnessError> {
    let intents = Arc::new(RuleBasedBackend::new(scenario.lexicon()));
    run_scenario_with(scenario, config, intents, &mut PolicyResponder::new(&scenario.human))
}

pub fn run_scenario_with(
    scenario: &Scenario,
    config: &EngineConfig,
    intents: Arc<dyn IntentBackend>,
    responder: &mut dyn ResponseSource,
) -> Result<RunOutput, HarnessError> {
    scenario.validate()?;
    let script = scenario.script();
    let settle = script.end() + scenario.tail_millis;
    let hard_cap = Timestamp(2 * settle + 120_000);
    let frame_period = config.detector.frame_period_millis();

    let mut rec = Recorder::new(scenario, config, intents)?;
    let mut robot = RobotSim::new(script, scenario.recovery);
    let mut face = Face::new(&scenario.human, scenario.seed);
    let mut sampler = HumanSampler::new(&scenario.human, scenario.seed);
    let noise = scenario.noise.sample(scenario.seed, hard_cap);
    for burst in &noise.bursts {
        face.add_burst(*burst);
    }

    let mut queue: BTreeMap<(Timestamp, u64), Pending> = BTreeMap::new();
    let mut seq = 0u64;
    let mut scheduled = |queue: &mut BTreeMap<_, _>, t: Timestamp, p: Pending| {
        queue.insert((t, seq), p);
        seq += 1;
    };
    for (t, text) in &noise.utterances {
        scheduled(&mut queue, *t, Pending { text: text.clone(), report_of: None, noise: true });
    }
    let mut pending_human = 0usize;

    let mut next_action = 0usize;
    let mut next_status = Timestamp::ZERO;
    let mut next_frame = Timestamp::ZERO;
    let mut t = Timestamp::ZERO;

    loop {
        let mut emitted = Vec::new();

        let recovery_done = robot.take_recovery_complete(t);
        let s = robot.script_time(t);
        let mut action_start = false;
        while robot.script().actions().get(next_action).is_some_and(|a| a.start.0 <= s) {
            action_start = true;
            next_action += 1;
        }
        if t == next_status || recovery_done || action_start {
            let mut status = robot.status_at(t);
            status.recovery_complete = recovery_done;
            let (out, occurred) = rec.feed(EventEnvelope::new(Payload::RobotStatus(status)))?;
            emitted.extend(out);
            if let Some(i) = occurred.filter(|&i| rec.book.is_perceived(i)) {
                let plan = sampler.react(rec.book.error_id(i), t);
                face.add_burst(plan.au_burst);
                if let Some((at, text)) = plan.speech {
                    scheduled(&mut queue, at, Pending { text, report_of: None, noise: false });
                    pending_human += 1;
                }
                if let Some((at, text)) = plan.report {
                    scheduled(&mut queue, at, Pending { text, report_of: Some(i), noise: false });
                    pending_human += 1;
                }
            }
            if t == next_status {
                next_status = t + STATUS_PERIOD_MILLIS;
            }
        }
        // commands land before the next input at the same instant
        apply_commands(&mut robot, &emitted);
        let mut queries = take_queries(&emitted);

        if t == next_frame {
            let (out, _) = rec.feed(EventEnvelope::new(Payload::AuFrame(face.frame(t))))?;
            apply_commands(&mut robot, &out);
            queries.extend(take_queries(&out));
            next_frame = t + frame_period;
        }

        while let Some(entry) = queue.first_entry().filter(|e| e.key().0 <= t) {
            let p = entry.remove();
            if !p.noise {
                pending_human -= 1;
            }
            if p.report_of.is_some_and(|i| rec.book.is_resolved(i)) {
                tracing::debug!(%t, "report withheld: error already resolved");
                continue;
            }
            let (out, _) = rec.feed(EventEnvelope::new(Payload::Utterance(Utterance::human(t, p.text))))?;
            apply_commands(&mut robot, &out);
            queries.extend(take_queries(&out));
        }

        for query in queries {
            let error_pending = rec.book.unresolved_perceived(t);
            if let Some(r) = responder.respond(t, &query, error_pending) {
                scheduled(&mut queue, t + r.latency_millis, Pending { text: r.text, report_of: None, noise: false });
                pending_human += 1;
            }
        }

        let settled = robot.script_time(t) >= settle
            && pending_human == 0
            && robot.next_recovery_complete().is_none()
            && matches!(rec.engine.phase(), Phase::Monitoring);
        if settled || t >= hard_cap {
            return Ok(rec.finish(t));
        }

        let mut next = next_status.min(next_frame);
        if let Some(&(at, _)) = queue.keys().next() {
            next = next.min(at);
        }
        if let Some(at) = robot.next_recovery_complete() {
            next = next.min(at);
        }
        if let Some(a) = robot.script().actions().get(next_action) {
            if !robot.is_paused(t) {
                next = next.min(t + (a.start.0 - robot.script_time(t)));
            }
        }
        t = next.max(t + 1);
    }
}

fn apply_commands(robot: &mut RobotSim, emitted: &[EventEnvelope]) {
    for env in emitted {
        if let Payload::Command(c) = &env.payload {
            if let Some(d) = robot.apply_command(c) {
                tracing::debug!(t = %d.t, message = %d.message, "robot diagnostic");
            }
        }
    }
}

fn take_queries(emitted: &[EventEnvelope]) -> Vec<String> {
    emitted
        .iter()
        .filter_map(|env| match &env.payload {
            Payload::Command(c) => match &c.kind {
                CommandKind::Say { text, role: SayRole::Query } => Some(text.clone()),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

/// Feeds the recorded inputs of `trace` through a fresh engine and checks
/// that every output matches what was recorded.
pub fn replay(scenario: &Scenario, config: &EngineConfig, trace: &[EventEnvelope]) -> Result<RunOutput, HarnessError> {
    let intents = Arc::new(RuleBasedBackend::new(scenario.lexicon()));
    let mut rec = Recorder::new(scenario, config, intents)?;
    let mut end = Timestamp::ZERO;
    for env in trace {
        if matches!(env.payload, Payload::RobotStatus(_) | Payload::AuFrame(_) | Payload::Utterance(_)) {
            end = env.t;
            rec.feed(env.clone())?;
        }
    }
    if let Some(index) = rec.trace.iter().zip(trace).position(|(a, b)| a != b) {
        return Err(HarnessError::ReplayDivergence { index });
    }
    if rec.trace.len() != trace.len() {
        return Err(HarnessError::ReplayDivergence { index: rec.trace.len().min(trace.len()) });
    }
    Ok(rec.finish(end))
}
