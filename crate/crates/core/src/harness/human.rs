//! Synthetic participant: facial reactions, reactive speech, explicit reports,
//! query answers, and background noise.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::event::{AuFrame, AuId, Timestamp};

type FieldError = (String, String);

fn check_probability(field: &str, p: f64) -> Result<(), FieldError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err((field.into(), format!("probability {p} outside [0, 1]")))
    }
}

fn check_rate(field: &str, r: f64) -> Result<(), FieldError> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err((field.into(), format!("rate {r} must be finite and non-negative")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuReaction {
    pub latency_millis: u64,
    pub duration_millis: u64,
    /// Intensity added to every AU of the baseline face.
    pub magnitude: f64,
}

impl Default for AuReaction {
    fn default() -> Self {
        Self { latency_millis: 1500, duration_millis: 3000, magnitude: 2.0 }
    }
}

/// A scripted line with optional per-error wording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpokenReaction {
    pub latency_millis: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub texts: BTreeMap<String, String>,
    pub probability: f64,
}

impl SpokenReaction {
    pub fn text_for(&self, error_id: &str) -> &str {
        self.texts.get(error_id).unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsePolicy {
    #[default]
    Truthful,
    AlwaysFine,
    Silent,
}

fn default_speech() -> SpokenReaction {
    SpokenReaction { latency_millis: 1500, text: "oops".into(), texts: BTreeMap::new(), probability: 0.5 }
}

fn default_report() -> SpokenReaction {
    SpokenReaction { latency_millis: 5000, text: "You made a mistake.".into(), texts: BTreeMap::new(), probability: 1.0 }
}

pub fn default_baseline_face() -> BTreeMap<AuId, f64> {
    [(1, 0.4), (2, 0.3), (4, 0.6), (6, 0.5), (7, 0.4), (12, 0.8), (15, 0.3), (25, 0.5)].into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumanModel {
    pub au_reaction: AuReaction,
    pub speech_reaction: SpokenReaction,
    pub explicit_report: SpokenReaction,
    pub query_response_policy: ResponsePolicy,
    pub query_response_latency_millis: u64,
    pub affirmative_text: String,
    pub negative_text: String,
    /// Errors absent from the map are perceived.
    pub perceives_error: BTreeMap<String, bool>,
    /// Each sampled latency moves uniformly within ± this many milliseconds.
    pub latency_jitter_millis: u64,
    pub baseline_face: BTreeMap<AuId, f64>,
    /// Standard deviation of per-frame sensor noise on every AU.
    pub sensor_noise_sd: f64,
}

impl Default for HumanModel {
    fn default() -> Self {
        Self {
            au_reaction: AuReaction::default(),
            speech_reaction: default_speech(),
            explicit_report: default_report(),
            query_response_policy: ResponsePolicy::Truthful,
            query_response_latency_millis: 1000,
            affirmative_text: "Yes, all good.".into(),
            negative_text: "No, not really.".into(),
            perceives_error: BTreeMap::new(),
            latency_jitter_millis: 0,
            baseline_face: default_baseline_face(),
            sensor_noise_sd: 0.05,
        }
    }
}

impl HumanModel {
    pub(crate) fn validate(&self) -> Result<(), FieldError> {
        check_probability("/speech_reaction/probability", self.speech_reaction.probability)?;
        check_probability("/explicit_report/probability", self.explicit_report.probability)?;
        let m = self.au_reaction.magnitude;
        if !(m.is_finite() && (0.0..=5.0).contains(&m)) {
            return Err(("/au_reaction/magnitude".into(), format!("magnitude {m} outside [0, 5]")));
        }
        if self.baseline_face.is_empty() {
            return Err(("/baseline_face".into(), "needs at least one AU".into()));
        }
        if let Some((au, v)) = self.baseline_face.iter().find(|(_, v)| !(v.is_finite() && (0.0..=5.0).contains(*v))) {
            return Err((format!("/baseline_face/{au}"), format!("intensity {v} outside [0, 5]")));
        }
        if !(self.sensor_noise_sd.is_finite() && self.sensor_noise_sd >= 0.0) {
            return Err(("/sensor_noise_sd".into(), "must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Spontaneous facial bursts per minute.
    pub au_burst_rate: f64,
    pub au_burst_magnitude: f64,
    pub au_burst_duration_millis: u64,
    /// Off-task human utterances per minute.
    pub distractor_rate: f64,
    pub distractor_texts: Vec<String>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            au_burst_rate: 0.0,
            au_burst_magnitude: 2.0,
            au_burst_duration_millis: 3000,
            distractor_rate: 0.0,
            distractor_texts: Vec::new(),
        }
    }
}

impl NoiseModel {
    pub(crate) fn validate(&self) -> Result<(), FieldError> {
        check_rate("/au_burst_rate", self.au_burst_rate)?;
        check_rate("/distractor_rate", self.distractor_rate)?;
        if !(self.au_burst_magnitude.is_finite() && (0.0..=5.0).contains(&self.au_burst_magnitude)) {
            return Err(("/au_burst_magnitude".into(), "outside [0, 5]".into()));
        }
        if self.distractor_rate > 0.0 && self.distractor_texts.is_empty() {
            return Err(("/distractor_texts".into(), "needed when distractor_rate > 0".into()));
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.au_burst_rate == 0.0 && self.distractor_rate == 0.0
    }

    /// Pre-draws every noise event before `horizon`; noise never depends on
    /// what the engine does.
    pub fn sample(&self, seed: u64, horizon: Timestamp) -> NoiseSchedule {
        let mut rng = stream(seed, Stream::Noise);
        let bursts = poisson_times(&mut rng, self.au_burst_rate, horizon)
            .into_iter()
            .map(|t| Burst { start: t, end: t + self.au_burst_duration_millis, magnitude: self.au_burst_magnitude })
            .collect();
        let utterances = poisson_times(&mut rng, self.distractor_rate, horizon)
            .into_iter()
            .map(|t| (t, self.distractor_texts[rng.random_range(0..self.distractor_texts.len())].clone()))
            .collect();
        NoiseSchedule { bursts, utterances }
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, per_minute: f64, horizon: Timestamp) -> Vec<Timestamp> {
    if per_minute <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(per_minute / 60_000.0).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= horizon.0 as f64 {
            return out;
        }
        out.push(Timestamp(t.round() as u64));
    }
}

#[derive(Debug, Clone, Default)]
pub struct NoiseSchedule {
    pub bursts: Vec<Burst>,
    pub utterances: Vec<(Timestamp, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start: Timestamp,
    pub end: Timestamp,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Human = 1,
    Noise = 2,
    Sensor = 3,
}

pub(crate) fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Renders the participant's face: baseline plus active bursts plus sensor noise.
pub struct Face {
    baseline: BTreeMap<AuId, f64>,
    bursts: Vec<Burst>,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl Face {
    pub fn new(model: &HumanModel, seed: u64) -> Self {
        let noise = (model.sensor_noise_sd > 0.0).then(|| Normal::new(0.0, model.sensor_noise_sd).expect("validated sd"));
        Self { baseline: model.baseline_face.clone(), bursts: Vec::new(), noise, rng: stream(seed, Stream::Sensor) }
    }

    pub fn add_burst(&mut self, burst: Burst) {
        self.bursts.push(burst);
    }

    pub fn frame(&mut self, t: Timestamp) -> AuFrame {
        self.bursts.retain(|b| b.end > t);
        let lift: f64 = self.bursts.iter().filter(|b| b.start <= t).map(|b| b.magnitude).sum();
        let intensities = self
            .baseline
            .iter()
            .map(|(&au, &base)| {
                let jitter = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
                (au, (base + lift + jitter).clamp(0.0, 5.0))
            })
            .collect();
        AuFrame::new(t, intensities)
    }
}

/// Sampled reactions to one perceived error.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionPlan {
    pub au_burst: Burst,
    pub speech: Option<(Timestamp, String)>,
    pub report: Option<(Timestamp, String)>,
}

pub struct HumanSampler<'a> {
    model: &'a HumanModel,
    rng: ChaCha8Rng,
}

impl<'a> HumanSampler<'a> {
    pub fn new(model: &'a HumanModel, seed: u64) -> Self {
        Self { model, rng: stream(seed, Stream::Human) }
    }

    fn latency(&mut self, base: u64) -> u64 {
        let j = self.model.latency_jitter_millis;
        if j == 0 {
            return base;
        }
        let offset = self.rng.random_range(0..=2 * j) as i64 - j as i64;
        base.saturating_add_signed(offset)
    }

    /// Draws are made in a fixed order so every error consumes the same
    /// amount of randomness whatever the outcome.
    pub fn react(&mut self, error_id: &str, occurred: Timestamp) -> ReactionPlan {
        let m = self.model;
        let au_at = occurred + self.latency(m.au_reaction.latency_millis);
        let speech_at = occurred + self.latency(m.speech_reaction.latency_millis);
        let report_at = occurred + self.latency(m.explicit_report.latency_millis);
        let speak = self.rng.random::<f64>() < m.speech_reaction.probability;
        let report = self.rng.random::<f64>() < m.explicit_report.probability;
        ReactionPlan {
            au_burst: Burst {
                start: au_at,
                end: au_at + m.au_reaction.duration_millis,
                magnitude: m.au_reaction.magnitude,
            },
            speech: speak.then(|| (speech_at, m.speech_reaction.text_for(error_id).to_owned())),
            report: report.then(|| (report_at, m.explicit_report.text_for(error_id).to_owned())),
        }
    }
}

/// How the participant answers a verification query.
pub trait ResponseSource {
    /// `error_pending` tells whether an unresolved perceived error exists.
    /// `None` means no answer.
    fn respond(&mut self, t: Timestamp, query: &str, error_pending: bool) -> Option<Response>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub latency_millis: u64,
    pub text: String,
}

/// Answers according to the scenario's policy.
#[derive(Debug, Clone)]
pub struct PolicyResponder {
    policy: ResponsePolicy,
    latency_millis: u64,
    affirmative: String,
    negative: String,
}

impl PolicyResponder {
    pub fn new(model: &HumanModel) -> Self {
        Self {
            policy: model.query_response_policy,
            latency_millis: model.query_response_latency_millis,
            affirmative: model.affirmative_text.clone(),
            negative: model.negative_text.clone(),
        }
    }
}

impl ResponseSource for PolicyResponder {
    fn respond(&mut self, _t: Timestamp, _query: &str, error_pending: bool) -> Option<Response> {
        let text = match self.policy {
            ResponsePolicy::Silent => return None,
            ResponsePolicy::AlwaysFine => &self.affirmative,
            ResponsePolicy::Truthful if error_pending => &self.negative,
            ResponsePolicy::Truthful => &self.affirmative,
        };
        Some(Response { latency_millis: self.latency_millis, text: text.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reaction_timing_is_occurrence_plus_latency() {
        let model = HumanModel::default();
        let plan = HumanSampler::new(&model, 1).react("e", Timestamp(20_000));
        assert_eq!(plan.au_burst.start, Timestamp(21_500));
        assert_eq!(plan.au_burst.end, Timestamp(24_500));
        assert_eq!(plan.report.unwrap().0, Timestamp(25_000));
    }

    #[test]
    fn jitter_stays_in_band_and_is_seeded() {
        let model = HumanModel { latency_jitter_millis: 200, ..Default::default() };
        let a: Vec<_> = (0..50).map(|i| HumanSampler::new(&model, 9).react("e", Timestamp(i)).au_burst.start).collect();
        let mut s = HumanSampler::new(&model, 9);
        for t in 0..50u64 {
            let start = s.react("e", Timestamp(t)).au_burst.start.0;
            assert!((t + 1300..=t + 1700).contains(&start));
        }
        assert_eq!(a, (0..50).map(|i| HumanSampler::new(&model, 9).react("e", Timestamp(i)).au_burst.start).collect::<Vec<_>>());
    }

    #[test]
    fn face_adds_burst_magnitude_while_active() {
        let model = HumanModel { sensor_noise_sd: 0.0, ..Default::default() };
        let mut face = Face::new(&model, 0);
        face.add_burst(Burst { start: Timestamp(100), end: Timestamp(300), magnitude: 1.0 });
        assert_eq!(face.frame(Timestamp(0)).intensities[&12], 0.8);
        assert_eq!(face.frame(Timestamp(100)).intensities[&12], 1.8);
        assert_eq!(face.frame(Timestamp(300)).intensities[&12], 0.8);
    }

    #[test]
    fn noise_sampling_is_seeded_and_bounded() {
        let noise = NoiseModel {
            au_burst_rate: 6.0,
            distractor_rate: 2.0,
            distractor_texts: vec!["hmm".into()],
            ..Default::default()
        };
        let a = noise.sample(3, Timestamp(600_000));
        let b = noise.sample(3, Timestamp(600_000));
        assert_eq!(a.bursts, b.bursts);
        assert!(a.bursts.iter().all(|x| x.start.0 < 600_000));
        // 60 expected; a wildly different count means the rate is mis-scaled
        assert!((30..100).contains(&a.bursts.len()), "{}", a.bursts.len());
    }

    #[test]
    fn truthful_policy_tracks_pending_errors() {
        let mut r = PolicyResponder::new(&HumanModel::default());
        assert_eq!(r.respond(Timestamp(0), "q", true).unwrap().text, "No, not really.");
        assert_eq!(r.respond(Timestamp(0), "q", false).unwrap().text, "Yes, all good.");
        let silent = HumanModel { query_response_policy: ResponsePolicy::Silent, ..Default::default() };
        assert_eq!(PolicyResponder::new(&silent).respond(Timestamp(0), "q", true), None);
    }
}
