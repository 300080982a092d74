//! AU branch of potential-error detection.
//!
//! Each frame is scored by a [`FrameClassifier`], the boolean flag goes into a
//! time-bounded [`VoteWindow`], and a candidate fires when the flagged share of
//! the window strictly exceeds the current vote fraction. Verification
//! feedback raises the vote fraction; it then decays linearly back to base.

mod scorer;
mod window;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scorer::{BaselineDeviationScorer, FrameClassifier};
pub use window::VoteWindow;

use crate::event::{AuFrame, AuId, Timestamp};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("frame at {t} has AU set {found:?}, stream started with {expected:?}")]
    KeySetMismatch { t: Timestamp, expected: Vec<AuId>, found: Vec<AuId> },
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub window_millis: u64,
    pub vote_fraction_base: f64,
    pub frame_theta_base: f64,
    pub boost_delta: f64,
    pub boost_cap: f64,
    pub decay_millis: u64,
    pub baseline_alpha: f64,
    pub frame_rate_hz: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_millis: 4000,
            vote_fraction_base: 0.5,
            frame_theta_base: 0.5,
            boost_delta: 0.25,
            boost_cap: 0.9,
            decay_millis: 60_000,
            baseline_alpha: 0.05,
            frame_rate_hz: 10.0,
        }
    }
}

impl DetectorConfig {
    /// Number of frame slots in the window, rounded down.
    pub fn window_capacity(&self) -> usize {
        (self.window_millis as f64 * self.frame_rate_hz / 1000.0).floor() as usize
    }

    pub fn frame_period_millis(&self) -> u64 {
        (1000.0 / self.frame_rate_hz).round().max(1.0) as u64
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |msg: String| Err(DetectorError::InvalidConfig(msg));
        if self.window_millis == 0 {
            return bad("window_millis must be positive".into());
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return bad(format!("frame_rate_hz must be positive, got {}", self.frame_rate_hz));
        }
        if !(self.vote_fraction_base > 0.0 && self.vote_fraction_base <= 1.0) {
            return bad(format!("vote_fraction_base must be in (0, 1], got {}", self.vote_fraction_base));
        }
        if !(self.vote_fraction_base <= self.boost_cap && self.boost_cap < 1.0) {
            return bad(format!(
                "need vote_fraction_base <= boost_cap < 1, got {} and {}",
                self.vote_fraction_base, self.boost_cap
            ));
        }
        if !(self.frame_theta_base.is_finite() && self.frame_theta_base > 0.0) {
            return bad(format!("frame_theta_base must be positive, got {}", self.frame_theta_base));
        }
        if !(self.boost_delta.is_finite() && self.boost_delta >= 0.0) {
            return bad(format!("boost_delta must be non-negative, got {}", self.boost_delta));
        }
        if self.decay_millis == 0 {
            return bad("decay_millis must be positive".into());
        }
        if !(self.baseline_alpha > 0.0 && self.baseline_alpha < 1.0) {
            return bad(format!("baseline_alpha must be in (0, 1), got {}", self.baseline_alpha));
        }
        if self.window_capacity() < 2 {
            return bad(format!("window holds {} frames, need at least 2", self.window_capacity()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFlag {
    pub t: Timestamp,
    pub flagged: bool,
    pub score: f64,
}

/// What the human said in answer to a verification query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationResult {
    ErrorConfirmed,
    NoError,
}

/// One row of the diagnostic flag trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub t: u64,
    pub score: f64,
    pub flagged: bool,
    pub vote_fraction: f64,
}

/// Result of feeding one frame through decay, scoring and the window vote.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub flag: FrameFlag,
    /// Newest frame time when the window vote fired.
    pub candidate: Option<Timestamp>,
    pub vote_fraction: f64,
}

impl FrameOutcome {
    pub fn record(&self) -> FlagRecord {
        FlagRecord { t: self.flag.t.0, score: self.flag.score, flagged: self.flag.flagged, vote_fraction: self.vote_fraction }
    }
}

#[derive(Clone)]
pub struct AuDetector {
    config: DetectorConfig,
    classifier: Box<dyn FrameClassifier>,
    window: VoteWindow,
    vote_fraction_now: f64,
    boosted_value: f64,
    last_boost_at: Option<Timestamp>,
}

impl std::fmt::Debug for AuDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuDetector")
            .field("config", &self.config)
            .field("window_flagged", &self.window.flagged_count())
            .field("vote_fraction_now", &self.vote_fraction_now)
            .field("last_boost_at", &self.last_boost_at)
            .finish()
    }
}

impl AuDetector {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectorError> {
        let scorer = BaselineDeviationScorer::new(config.baseline_alpha, config.frame_theta_base);
        Self::with_classifier(config, Box::new(scorer))
    }

    pub fn with_classifier(config: DetectorConfig, classifier: Box<dyn FrameClassifier>) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Self {
            window: VoteWindow::new(config.window_capacity(), config.window_millis),
            vote_fraction_now: config.vote_fraction_base,
            boosted_value: config.vote_fraction_base,
            last_boost_at: None,
            classifier,
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn vote_fraction(&self) -> f64 {
        self.vote_fraction_now
    }

    pub fn last_boost_at(&self) -> Option<Timestamp> {
        self.last_boost_at
    }

    pub fn window(&self) -> &VoteWindow {
        &self.window
    }

    /// Scores a frame and appends its flag to the window.
    pub fn score_frame(&mut self, frame: &AuFrame) -> Result<FrameFlag, DetectorError> {
        if let Some(newest) = self.window.newest() {
            if frame.t < newest {
                return Err(DetectorError::MalformedFrame(format!("frame at {} precedes {}", frame.t, newest)));
            }
        }
        let score = self.classifier.score(frame)?;
        let flag = FrameFlag { t: frame.t, flagged: score > self.classifier.theta(), score };
        self.window.push(flag);
        Ok(flag)
    }

    /// Fires when the flagged share strictly exceeds the vote fraction, then
    /// clears the window so one sustained expression fires once.
    pub fn window_vote(&mut self) -> Option<Timestamp> {
        let newest = self.window.newest()?;
        if self.window.exceeds(self.vote_fraction_now) {
            self.window.clear();
            Some(newest)
        } else {
            None
        }
    }

    pub fn adapt_after_verification(&mut self, result: VerificationResult, now: Timestamp) {
        if result == VerificationResult::ErrorConfirmed {
            return;
        }
        self.decay_threshold(now);
        let raised = (self.vote_fraction_now + self.config.boost_delta).min(self.config.boost_cap);
        self.vote_fraction_now = raised;
        self.boosted_value = raised;
        self.last_boost_at = Some(now);
    }

    /// Linear return to base over `decay_millis` from the last boost.
    pub fn decay_threshold(&mut self, now: Timestamp) {
        let Some(at) = self.last_boost_at else { return };
        let base = self.config.vote_fraction_base;
        let elapsed = now.0.saturating_sub(at.0);
        if elapsed >= self.config.decay_millis {
            self.vote_fraction_now = base;
            return;
        }
        let progress = elapsed as f64 / self.config.decay_millis as f64;
        let value = self.boosted_value - (self.boosted_value - base) * progress;
        self.vote_fraction_now = value.max(base);
    }

    /// Decay, score, and vote for one frame.
    pub fn process_frame(&mut self, frame: &AuFrame) -> Result<FrameOutcome, DetectorError> {
        self.decay_threshold(frame.t);
        let flag = self.score_frame(frame)?;
        let vote_fraction = self.vote_fraction_now;
        let candidate = self.window_vote();
        Ok(FrameOutcome { flag, candidate, vote_fraction })
    }
}

/// Writes the diagnostic trace as `t,score,flagged,vote_fraction`.
pub fn write_flag_csv<W: Write>(w: W, records: &[FlagRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
