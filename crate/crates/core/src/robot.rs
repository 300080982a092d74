//! Simulated robot controller.
//!
//! Replays a scripted action timeline and honors pause, resume, stop and
//! recover commands. Script time advances with wall time except while paused,
//! so every script instant after a pause lands later by exactly the paused
//! duration. No kinematics: the only outputs are movement, gripper state and
//! time since last movement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Command, CommandKind, GripperState, RobotStatus, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotAction {
    pub id: String,
    pub start: Timestamp,
    pub duration_millis: u64,
    pub moving: bool,
    /// `(offset from start, state)` pairs; the state holds until the next change.
    #[serde(default)]
    pub gripper_profile: Vec<(u64, GripperState)>,
    /// Marks this segment as the occurrence of an injected error.
    #[serde(default)]
    pub is_error: Option<String>,
}

impl RobotAction {
    pub fn end(&self) -> u64 {
        self.start.0 + self.duration_millis
    }

    fn contains(&self, s: u64) -> bool {
        self.start.0 <= s && s < self.end()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("action {index} ({id}) has zero duration")]
    ZeroDuration { index: usize, id: String },
    #[error("action {index} ({id}) starts before the previous action ends")]
    Overlap { index: usize, id: String },
    #[error("action {index} ({id}) has a gripper change outside its duration or out of order")]
    GripperProfile { index: usize, id: String },
    #[error("duplicate action id {id}")]
    DuplicateId { index: usize, id: String },
}

impl ScriptError {
    pub fn index(&self) -> usize {
        match self {
            ScriptError::ZeroDuration { index, .. }
            | ScriptError::Overlap { index, .. }
            | ScriptError::GripperProfile { index, .. }
            | ScriptError::DuplicateId { index, .. } => *index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RobotScript {
    actions: Vec<RobotAction>,
}

impl RobotScript {
    pub fn new(actions: Vec<RobotAction>) -> Result<Self, ScriptError> {
        let mut seen = std::collections::BTreeSet::new();
        for (index, a) in actions.iter().enumerate() {
            let id = a.id.clone();
            if a.duration_millis == 0 {
                return Err(ScriptError::ZeroDuration { index, id });
            }
            if index > 0 && a.start.0 < actions[index - 1].end() {
                return Err(ScriptError::Overlap { index, id });
            }
            let offsets_ok = a.gripper_profile.windows(2).all(|w| w[0].0 <= w[1].0)
                && a.gripper_profile.iter().all(|(o, _)| *o < a.duration_millis);
            if !offsets_ok {
                return Err(ScriptError::GripperProfile { index, id });
            }
            if !seen.insert(a.id.as_str()) {
                return Err(ScriptError::DuplicateId { index, id });
            }
        }
        Ok(Self { actions })
    }

    pub fn actions(&self) -> &[RobotAction] {
        &self.actions
    }

    /// Script time at which the last action ends.
    pub fn end(&self) -> u64 {
        self.actions.last().map_or(0, RobotAction::end)
    }

    pub fn action_at(&self, s: u64) -> Option<&RobotAction> {
        let i = self.actions.partition_point(|a| a.start.0 <= s);
        i.checked_sub(1).map(|i| &self.actions[i]).filter(|a| a.contains(s))
    }

    pub fn moving_at(&self, s: u64) -> bool {
        self.action_at(s).is_some_and(|a| a.moving)
    }

    pub fn gripper_at(&self, s: u64) -> GripperState {
        let mut state = GripperState::Open;
        for a in self.actions.iter().take_while(|a| a.start.0 <= s) {
            for (offset, g) in &a.gripper_profile {
                if a.start.0 + offset <= s {
                    state = *g;
                }
            }
        }
        state
    }

    /// End of the most recent moving stretch strictly before script time `s`,
    /// clipped to `s`.
    fn last_moving_end_before(&self, s: u64) -> Option<u64> {
        self.actions.iter().filter(|a| a.moving && a.start.0 < s).map(|a| a.end().min(s)).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryBehavior {
    pub duration_millis: u64,
}

impl Default for RecoveryBehavior {
    fn default() -> Self {
        Self { duration_millis: 4000 }
    }
}

/// A pause interval in wall time; `end` is `None` while still paused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PauseSpan {
    pub start: Timestamp,
    pub end: Option<Timestamp>,
}

impl PauseSpan {
    fn overlap_before(&self, now: u64) -> u64 {
        let end = self.end.map_or(now, |e| e.0.min(now));
        end.saturating_sub(self.start.0)
    }
}

/// Everything the commands did to the timeline.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommandLedger {
    pub pauses: Vec<PauseSpan>,
    /// Recovery behaviors as wall-time `[start, end)` intervals.
    pub recoveries: Vec<(Timestamp, Timestamp)>,
    pub stopped_at: Option<Timestamp>,
}

impl CommandLedger {
    pub fn paused_at(&self, now: Timestamp) -> bool {
        self.pauses.iter().any(|p| p.start <= now && p.end.is_none_or(|e| now < e))
    }

    pub fn paused_total(&self, now: Timestamp) -> u64 {
        self.pauses.iter().filter(|p| p.start < now).map(|p| p.overlap_before(now.0)).sum()
    }

    pub fn script_time(&self, now: Timestamp) -> u64 {
        now.0 - self.paused_total(now)
    }

    pub fn recovering_at(&self, now: Timestamp) -> bool {
        self.recoveries.iter().any(|(s, e)| *s <= now && now < *e)
    }

    /// First wall time at which script time reaches `s`, or `None` if an
    /// open pause holds the script short of it.
    pub fn wall_of_script(&self, s: u64) -> Option<Timestamp> {
        let mut w = s;
        for p in &self.pauses {
            if p.start.0 < w {
                match p.end {
                    Some(e) => w += e.0 - p.start.0,
                    None => return None,
                }
            }
        }
        Some(Timestamp(w))
    }
}

/// Robot status at `now`, pure in `(script, now, ledger)`.
pub fn status_at(script: &RobotScript, now: Timestamp, ledger: &CommandLedger) -> RobotStatus {
    let s = ledger.script_time(now);
    let paused = ledger.paused_at(now);
    let recovering = ledger.recovering_at(now);
    let moving = recovering || (!paused && script.moving_at(s));

    let millis_since_last_movement = if moving {
        0
    } else {
        let from_script = script.last_moving_end_before(s).map(|e| {
            // a stretch cut short by a pause ends when that pause began
            ledger.wall_of_script(e).map_or(now.0, |w| w.0.min(now.0))
        });
        let from_recovery = ledger.recoveries.iter().filter(|(st, _)| *st <= now).map(|(_, e)| e.0.min(now.0)).max();
        match from_script.max(from_recovery) {
            Some(end) => now.0 - end,
            None => now.0,
        }
    };

    RobotStatus {
        t: now,
        moving,
        gripper: script.gripper_at(s),
        millis_since_last_movement,
        current_action_id: script.action_at(s).map(|a| a.id.clone()),
        recovery_complete: false,
    }
}

/// Diagnostic for a command the simulator could not honor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandDiagnostic {
    pub t: Timestamp,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RobotSim {
    script: RobotScript,
    recovery: RecoveryBehavior,
    ledger: CommandLedger,
    pending_completion: Option<Timestamp>,
}

impl RobotSim {
    pub fn new(script: RobotScript, recovery: RecoveryBehavior) -> Self {
        Self { script, recovery, ledger: CommandLedger::default(), pending_completion: None }
    }

    pub fn script(&self) -> &RobotScript {
        &self.script
    }

    pub fn ledger(&self) -> &CommandLedger {
        &self.ledger
    }

    pub fn status_at(&self, now: Timestamp) -> RobotStatus {
        status_at(&self.script, now, &self.ledger)
    }

    pub fn script_time(&self, now: Timestamp) -> u64 {
        self.ledger.script_time(now)
    }

    pub fn is_paused(&self, now: Timestamp) -> bool {
        self.ledger.paused_at(now)
    }

    /// When the pending recovery behavior finishes, if one is running.
    pub fn next_recovery_complete(&self) -> Option<Timestamp> {
        self.pending_completion
    }

    /// Consumes the pending completion if it falls at `now`.
    pub fn take_recovery_complete(&mut self, now: Timestamp) -> bool {
        if self.pending_completion == Some(now) {
            self.pending_completion = None;
            true
        } else {
            false
        }
    }

    pub fn apply_command(&mut self, cmd: &Command) -> Option<CommandDiagnostic> {
        let t = cmd.t;
        let diag = |message: &str| Some(CommandDiagnostic { t, message: message.to_owned() });
        match &cmd.kind {
            CommandKind::Pause => {
                if !self.ledger.paused_at(t) {
                    self.ledger.pauses.push(PauseSpan { start: t, end: None });
                }
                None
            }
            CommandKind::Resume => {
                if self.ledger.stopped_at.is_some() {
                    return diag("resume ignored: robot is stopped");
                }
                match self.ledger.pauses.last_mut() {
                    Some(p) if p.end.is_none() => {
                        p.end = Some(t);
                        None
                    }
                    _ => diag("resume without a prior pause"),
                }
            }
            CommandKind::Stop => {
                if !self.ledger.paused_at(t) {
                    self.ledger.pauses.push(PauseSpan { start: t, end: None });
                }
                self.ledger.stopped_at.get_or_insert(t);
                None
            }
            CommandKind::Recover => {
                if let Some((_, end)) = self.ledger.recoveries.last_mut() {
                    if *end > t {
                        *end = t;
                    }
                }
                let done = t + self.recovery.duration_millis;
                self.ledger.recoveries.push((t, done));
                self.pending_completion = Some(done);
                None
            }
            CommandKind::Say { .. } => None,
        }
    }
}
