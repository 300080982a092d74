use std::collections::BTreeMap;

use crate::detector::DetectorError;
use crate::event::{AuFrame, AuId};

/// Per-frame classifier: decides whether one frame looks like a reaction.
///
/// The reference implementation is [`BaselineDeviationScorer`]; a trained
/// model can be dropped in behind the same interface.
pub trait FrameClassifier: Send {
    /// Scores a frame and updates any internal state. Higher means more
    /// reaction-like; the caller compares the score against `theta`.
    fn score(&mut self, frame: &AuFrame) -> Result<f64, DetectorError>;

    fn theta(&self) -> f64;

    fn box_clone(&self) -> Box<dyn FrameClassifier>;
}

impl Clone for Box<dyn FrameClassifier> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Mean absolute deviation of each AU from its exponential moving average.
///
/// The first frame seeds the baseline, so it always scores zero. The average
/// is updated after scoring.
#[derive(Debug, Clone)]
pub struct BaselineDeviationScorer {
    alpha: f64,
    theta: f64,
    baseline: Option<BTreeMap<AuId, f64>>,
}

impl BaselineDeviationScorer {
    pub fn new(alpha: f64, theta: f64) -> Self {
        Self { alpha, theta, baseline: None }
    }

    pub fn baseline(&self) -> Option<&BTreeMap<AuId, f64>> {
        self.baseline.as_ref()
    }
}

impl FrameClassifier for BaselineDeviationScorer {
    fn score(&mut self, frame: &AuFrame) -> Result<f64, DetectorError> {
        frame.validate().map_err(|e| DetectorError::MalformedFrame(e.to_string()))?;
        let baseline = self.baseline.get_or_insert_with(|| frame.intensities.clone());
        if !frame.same_keys(baseline) {
            return Err(DetectorError::KeySetMismatch {
                t: frame.t,
                expected: baseline.keys().copied().collect(),
                found: frame.intensities.keys().copied().collect(),
            });
        }
        if baseline.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (ema, &x) in baseline.values_mut().zip(frame.intensities.values()) {
            total += (x - *ema).abs();
            *ema = (1.0 - self.alpha) * *ema + self.alpha * x;
        }
        Ok(total / frame.intensities.len() as f64)
    }

    fn theta(&self) -> f64 {
        self.theta
    }

    fn box_clone(&self) -> Box<dyn FrameClassifier> {
        Box::new(self.clone())
    }
}
