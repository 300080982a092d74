//! Shared event model: timestamps, sensor payloads, engine outputs, and the
//! time-ordered merge that feeds the orchestrator.
//!
//! All time is integer milliseconds since scenario start. Envelopes serialize
//! to one JSON object per line with `t` first and a `kind` tag second.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub_millis(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(ms))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Signed difference in milliseconds.
impl Sub for Timestamp {
    type Output = i64;

    fn sub(self, rhs: Timestamp) -> i64 {
        self.0 as i64 - rhs.0 as i64
    }
}

impl Add<u64> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: u64) -> Timestamp {
        Timestamp(self.0 + rhs)
    }
}

pub type AuId = u8;

pub const AU_INTENSITY_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuFrame {
    pub t: Timestamp,
    #[serde(with = "au_keys")]
    pub intensities: BTreeMap<AuId, f64>,
}

/// AU ids are JSON object keys; a tagged payload buffers them as strings,
/// so they are parsed back explicitly.
mod au_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::AuId;

    pub fn serialize<S: Serializer>(m: &BTreeMap<AuId, f64>, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<AuId, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|au| (au, v)).map_err(|_| D::Error::custom(format!("bad AU id {k:?}"))))
            .collect()
    }
}

impl AuFrame {
    pub fn new(t: Timestamp, intensities: BTreeMap<AuId, f64>) -> Self {
        Self { t, intensities }
    }

    /// Checks every intensity is finite and within `[0, 5]`.
    pub fn validate(&self) -> Result<(), EventError> {
        for (&au, &v) in &self.intensities {
            if !v.is_finite() || !(0.0..=AU_INTENSITY_MAX).contains(&v) {
                return Err(EventError::IntensityOutOfRange { t: self.t, au, value: v });
            }
        }
        Ok(())
    }

    pub fn same_keys(&self, other: &BTreeMap<AuId, f64>) -> bool {
        self.intensities.len() == other.len() && self.intensities.keys().eq(other.keys())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub t: Timestamp,
    pub text: String,
    pub speaker: Speaker,
}

impl Utterance {
    pub fn human(t: Timestamp, text: impl Into<String>) -> Self {
        Self { t, text: text.into(), speaker: Speaker::Human }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.text.trim().is_empty() {
            return Err(EventError::EmptyUtterance { t: self.t });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperState {
    Open,
    Closed,
    Holding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotStatus {
    pub t: Timestamp,
    pub moving: bool,
    pub gripper: GripperState,
    pub millis_since_last_movement: u64,
    #[serde(default)]
    pub current_action_id: Option<String>,
    /// Set on the one status that reports the end of a recovery behavior.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recovery_complete: bool,
}

impl RobotStatus {
    pub fn idle(t: Timestamp, millis_since_last_movement: u64) -> Self {
        Self {
            t,
            moving: false,
            gripper: GripperState::Open,
            millis_since_last_movement,
            current_action_id: None,
            recovery_complete: false,
        }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        if self.moving && self.millis_since_last_movement != 0 {
            return Err(EventError::MovingWithStaleMovement { t: self.t });
        }
        Ok(())
    }
}

/// What a robot utterance is for; lets trace checks tell queries from apologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SayRole {
    Query,
    Apology,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CommandKind {
    Pause,
    Resume,
    Stop,
    Recover,
    Say { text: String, role: SayRole },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub t: Timestamp,
    #[serde(flatten)]
    pub kind: CommandKind,
}

impl Command {
    pub fn new(t: Timestamp, kind: CommandKind) -> Self {
        Self { t, kind }
    }

    pub fn is_query(&self) -> bool {
        matches!(self.kind, CommandKind::Say { role: SayRole::Query, .. })
    }
}

/// How a verification query ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOutcome {
    /// The human said something is wrong.
    Confirmed,
    /// The human said everything is fine.
    Dismissed,
    TimedOut,
    /// An explicit report arrived while the query was pending.
    Preempted,
}

/// A completed verification exchange, logged when the query resolves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryExchange {
    pub t: Timestamp,
    pub asked_at: Timestamp,
    pub query: String,
    pub modality: Modality,
    pub outcome: QueryOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[serde(rename = "au")]
    Au,
    Speech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    ImplicitAu,
    ImplicitSpeech,
    Explicit,
}

impl DetectionMethod {
    pub fn is_implicit(self) -> bool {
        !matches!(self, DetectionMethod::Explicit)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionMethod::ImplicitAu => "implicit_au",
            DetectionMethod::ImplicitSpeech => "implicit_speech",
            DetectionMethod::Explicit => "explicit",
        }
    }
}

impl From<Modality> for DetectionMethod {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Au => DetectionMethod::ImplicitAu,
            Modality::Speech => DetectionMethod::ImplicitSpeech,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub t_detected: Timestamp,
    pub method: DetectionMethod,
    pub t_signal: Timestamp,
    /// True when a verification query was answered negatively.
    pub verified: bool,
    #[serde(default)]
    pub matched_error_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    AuFrame(AuFrame),
    Utterance(Utterance),
    RobotStatus(RobotStatus),
    Command(Command),
    QueryExchange(QueryExchange),
    Detection(DetectionEvent),
}

impl Payload {
    pub fn t(&self) -> Timestamp {
        match self {
            Payload::AuFrame(f) => f.t,
            Payload::Utterance(u) => u.t,
            Payload::RobotStatus(s) => s.t,
            Payload::Command(c) => c.t,
            Payload::QueryExchange(q) => q.t,
            Payload::Detection(d) => d.t_detected,
        }
    }

    /// Tie-break rank at equal timestamps: status context first, then signals.
    pub fn priority(&self) -> u8 {
        match self {
            Payload::RobotStatus(_) => 0,
            Payload::AuFrame(_) => 1,
            Payload::Utterance(_) => 2,
            Payload::Command(_) => 3,
            Payload::QueryExchange(_) => 4,
            Payload::Detection(_) => 5,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::AuFrame(_) => "au_frame",
            Payload::Utterance(_) => "utterance",
            Payload::RobotStatus(_) => "robot_status",
            Payload::Command(_) => "command",
            Payload::QueryExchange(_) => "query_exchange",
            Payload::Detection(_) => "detection",
        }
    }
}

/// A timestamped event. The timestamp always equals the payload's own time.
#[derive(Debug, Clone, PartialEq)]
pub struct EventEnvelope {
    pub t: Timestamp,
    pub payload: Payload,
}

impl EventEnvelope {
    pub fn new(payload: Payload) -> Self {
        Self { t: payload.t(), payload }
    }

    pub fn priority(&self) -> u8 {
        self.payload.priority()
    }

    /// One JSON object, `t` first, then `kind`, then payload fields.
    pub fn to_json_line(&self) -> String {
        let value = serde_json::to_value(&self.payload).expect("payload serializes");
        let serde_json::Value::Object(fields) = value else {
            unreachable!("internally tagged enum serializes to an object")
        };
        let mut out = serde_json::Map::with_capacity(fields.len() + 1);
        out.insert("t".into(), serde_json::Value::from(self.t.0));
        for (k, v) in fields {
            if k != "t" {
                out.insert(k, v);
            }
        }
        serde_json::to_string(&serde_json::Value::Object(out)).expect("map serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, EventError> {
        let value: serde_json::Value = serde_json::from_str(line)?;
        let t = value
            .get("t")
            .and_then(serde_json::Value::as_u64)
            .ok_or(EventError::MissingTimestamp)?;
        let payload: Payload = serde_json::from_value(value)?;
        if payload.t().0 != t {
            return Err(EventError::TimestampMismatch { envelope: Timestamp(t), payload: payload.t() });
        }
        Ok(Self { t: Timestamp(t), payload })
    }
}

impl From<Payload> for EventEnvelope {
    fn from(p: Payload) -> Self {
        EventEnvelope::new(p)
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("stream {stream} regresses at offset {offset}: {found} after {previous}")]
    Regression { stream: usize, offset: usize, previous: Timestamp, found: Timestamp },
    #[error("AU {au} intensity {value} at {t} is outside [0, 5]")]
    IntensityOutOfRange { t: Timestamp, au: AuId, value: f64 },
    #[error("empty utterance at {t}")]
    EmptyUtterance { t: Timestamp },
    #[error("robot status at {t} is moving but reports time since last movement")]
    MovingWithStaleMovement { t: Timestamp },
    #[error("envelope has no integer `t` field")]
    MissingTimestamp,
    #[error("envelope time {envelope} does not match payload time {payload}")]
    TimestampMismatch { envelope: Timestamp, payload: Timestamp },
    #[error("line {line}: {source}")]
    Line { line: usize, source: Box<EventError> },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(PartialEq, Eq)]
struct HeapKey {
    t: Timestamp,
    priority: u8,
    stream: usize,
    offset: usize,
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        (other.t, other.priority, other.stream, other.offset).cmp(&(self.t, self.priority, self.stream, self.offset))
    }
}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// K-way merge of individually time-ordered streams.
///
/// Output order is `(t, kind priority, stream index, offset)`, so a robot
/// status is applied before any signal at the same instant and the merge is
/// stable within each stream.
pub fn merge_streams(streams: Vec<Vec<EventEnvelope>>) -> Result<Vec<EventEnvelope>, EventError> {
    for (si, stream) in streams.iter().enumerate() {
        for (offset, pair) in stream.windows(2).enumerate() {
            if pair[1].t < pair[0].t {
                return Err(EventError::Regression {
                    stream: si,
                    offset: offset + 1,
                    previous: pair[0].t,
                    found: pair[1].t,
                });
            }
        }
    }

    let total = streams.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = streams.into_iter().map(|s| s.into_iter().peekable()).collect();
    let mut heap = BinaryHeap::with_capacity(iters.len());
    for (stream, it) in iters.iter_mut().enumerate() {
        if let Some(e) = it.peek() {
            heap.push(HeapKey { t: e.t, priority: e.priority(), stream, offset: 0 });
        }
    }

    let mut out = Vec::with_capacity(total);
    while let Some(HeapKey { stream, offset, .. }) = heap.pop() {
        let it = &mut iters[stream];
        out.push(it.next().expect("heap entry has a pending event"));
        if let Some(e) = it.peek() {
            heap.push(HeapKey { t: e.t, priority: e.priority(), stream, offset: offset + 1 });
        }
    }
    Ok(out)
}

pub fn write_ndjson<W: Write>(mut w: W, events: &[EventEnvelope]) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_json_line())?;
    }
    w.flush()
}

pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<EventEnvelope>, EventError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = EventEnvelope::from_json_line(&line)
            .map_err(|source| EventError::Line { line: i + 1, source: Box::new(source) })?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn au(t: u64) -> EventEnvelope {
        let mut m = BTreeMap::new();
        m.insert(12, 0.5);
        EventEnvelope::new(Payload::AuFrame(AuFrame::new(Timestamp(t), m)))
    }

    fn status(t: u64) -> EventEnvelope {
        EventEnvelope::new(Payload::RobotStatus(RobotStatus::idle(Timestamp(t), 0)))
    }

    fn speech(t: u64, text: &str) -> EventEnvelope {
        EventEnvelope::new(Payload::Utterance(Utterance::human(Timestamp(t), text)))
    }

    #[test]
    fn timestamp_subtraction_is_signed() {
        assert_eq!(Timestamp(100) - Timestamp(250), -150);
        assert_eq!(Timestamp(250) - Timestamp(100), 150);
    }

    #[test]
    fn empty_streams_merge_to_empty() {
        assert!(merge_streams(vec![vec![], vec![]]).unwrap().is_empty());
    }

    #[test]
    fn status_wins_ties() {
        let merged = merge_streams(vec![vec![au(0), au(100), au(200)], vec![status(0), status(150)]]).unwrap();
        let got: Vec<(u64, &str)> = merged.iter().map(|e| (e.t.0, e.payload.kind_name())).collect();
        assert_eq!(
            got,
            vec![(0, "robot_status"), (0, "au_frame"), (100, "au_frame"), (150, "robot_status"), (200, "au_frame")]
        );
    }

    #[test]
    fn utterance_after_au_at_same_instant() {
        let merged = merge_streams(vec![vec![speech(50, "oops")], vec![au(50)], vec![status(50)]]).unwrap();
        let kinds: Vec<_> = merged.iter().map(|e| e.payload.kind_name()).collect();
        assert_eq!(kinds, ["robot_status", "au_frame", "utterance"]);
    }

    #[test]
    fn regression_names_stream_and_offset() {
        let err = merge_streams(vec![vec![au(0)], vec![status(0), status(300), status(200)]]).unwrap_err();
        match err {
            EventError::Regression { stream, offset, previous, found } => {
                assert_eq!((stream, offset, previous, found), (1, 2, Timestamp(300), Timestamp(200)));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn envelope_line_puts_t_then_kind() {
        let line = status(42).to_json_line();
        assert!(line.starts_with(r#"{"t":42,"kind":"robot_status","moving":false"#), "{line}");
        let back = EventEnvelope::from_json_line(&line).unwrap();
        assert_eq!(back, status(42));
    }

    #[test]
    fn command_and_detection_lines_parse_back() {
        let cmd = EventEnvelope::new(Payload::Command(Command::new(
            Timestamp(7),
            CommandKind::Say { text: "Is everything going according to plan?".into(), role: SayRole::Query },
        )));
        let det = EventEnvelope::new(Payload::Detection(DetectionEvent {
            t_detected: Timestamp(9),
            method: DetectionMethod::ImplicitAu,
            t_signal: Timestamp(5),
            verified: true,
            matched_error_id: Some("e1".into()),
        }));
        for e in [cmd, det] {
            let line = e.to_json_line();
            assert_eq!(EventEnvelope::from_json_line(&line).unwrap(), e, "{line}");
        }
    }

    #[test]
    fn au_frame_line_round_trips() {
        let f = au(300);
        let line = f.to_json_line();
        assert_eq!(EventEnvelope::from_json_line(&line).unwrap(), f, "{line}");
        let bad = line.replacen(r#"{"12":"#, r#"{"x":"#, 1);
        assert!(EventEnvelope::from_json_line(&bad).is_err());
    }

    #[test]
    fn mismatched_envelope_time_is_rejected() {
        let det = r#"{"t":5,"kind":"detection","t_detected":6,"method":"explicit","t_signal":6,"verified":false}"#;
        assert!(matches!(EventEnvelope::from_json_line(det), Err(EventError::TimestampMismatch { .. })));
    }

    #[test]
    fn frame_validation() {
        let mut m = BTreeMap::new();
        m.insert(4, 5.5);
        assert!(AuFrame::new(Timestamp(0), m).validate().is_err());
        assert!(Utterance::human(Timestamp(0), "   ").validate().is_err());
        let mut s = RobotStatus::idle(Timestamp(0), 10);
        s.moving = true;
        assert!(s.validate().is_err());
    }

    fn arb_streams() -> impl Strategy<Value = Vec<Vec<EventEnvelope>>> {
        let stream = |kind: u8| {
            prop::collection::vec(0u64..50, 0..400).prop_map(move |gaps| {
                let mut t = 0;
                gaps.into_iter()
                    .map(|g| {
                        t += g;
                        match kind {
                            0 => status(t),
                            1 => au(t),
                            _ => speech(t, "hello"),
                        }
                    })
                    .collect::<Vec<_>>()
            })
        };
        (stream(1), stream(0), stream(2)).prop_map(|(a, b, c)| vec![a, b, c])
    }

    proptest! {
        #[test]
        fn merge_matches_full_sort_oracle(streams in arb_streams()) {
            // oracle: tag every event with (t, priority, stream, offset) and fully sort
            let mut tagged = Vec::new();
            for (si, s) in streams.iter().enumerate() {
                for (oi, e) in s.iter().enumerate() {
                    tagged.push(((e.t, e.priority(), si, oi), e.clone()));
                }
            }
            tagged.sort_by(|a, b| a.0.cmp(&b.0));
            let expected: Vec<_> = tagged.into_iter().map(|(_, e)| e).collect();

            let merged = merge_streams(streams.clone()).unwrap();
            prop_assert_eq!(merged.len(), streams.iter().map(Vec::len).sum::<usize>());
            prop_assert_eq!(&merged, &expected);
            prop_assert!(merged.windows(2).all(|w| (w[0].t, w[0].priority()) <= (w[1].t, w[1].priority())));

            let again = merge_streams(vec![merged.clone()]).unwrap();
            prop_assert_eq!(&again, &merged);
            let bytes = |v: &[EventEnvelope]| v.iter().map(EventEnvelope::to_json_line).collect::<Vec<_>>();
            prop_assert_eq!(bytes(&merge_streams(streams).unwrap()), bytes(&merged));
        }
    }
}
