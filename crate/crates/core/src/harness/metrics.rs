use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenario::ErrorKind;
use crate::event::{DetectionMethod, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorOutcome {
    pub error_id: String,
    pub kind: ErrorKind,
    pub perceived: bool,
    /// `None` if the robot never reached the anchored action.
    pub occurred_at: Option<Timestamp>,
    pub detected: bool,
    pub method: Option<DetectionMethod>,
    pub t_signal: Option<Timestamp>,
    pub t_detected: Option<Timestamp>,
    /// From occurrence to the first signal of the error.
    pub delay_s: Option<f64>,
    /// From occurrence to confirmation.
    pub confirm_delay_s: Option<f64>,
}

/// Shares and percentages are in percent; `None` when the denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_delay_s: Option<f64>,
    pub mean_confirm_delay_s: Option<f64>,
    /// Over perceived errors only.
    pub percent_detected: Option<f64>,
    pub implicit_share: Option<f64>,
    pub implicit_au_share: Option<f64>,
    pub implicit_speech_share: Option<f64>,
    pub false_positive_queries: usize,
    pub query_count: usize,
    pub unmatched_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_error: Vec<ErrorOutcome>,
    pub aggregates: Aggregates,
}

impl RunMetrics {
    pub fn detections(&self) -> impl Iterator<Item = &ErrorOutcome> {
        self.per_error.iter().filter(|e| e.detected)
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    config: &'a str,
    error_id: &'a str,
    kind: &'static str,
    detected: bool,
    method: &'static str,
    delay_s: Option<f64>,
}

/// One row per injected error: `scenario,config,error_id,kind,detected,method,delay_s`.
pub fn write_metrics_csv<W: Write>(w: W, runs: &[(&str, &str, &RunMetrics)]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut wrote = false;
    for (scenario, config, metrics) in runs {
        for e in &metrics.per_error {
            out.serialize(CsvRow {
                scenario,
                config,
                error_id: &e.error_id,
                kind: e.kind.as_str(),
                detected: e.detected,
                method: e.method.map_or("", DetectionMethod::as_str),
                delay_s: e.delay_s,
            })?;
            wrote = true;
        }
    }
    if !wrote {
        out.write_record(["scenario", "config", "error_id", "kind", "detected", "method", "delay_s"])?;
    }
    out.flush()?;
    Ok(())
}
