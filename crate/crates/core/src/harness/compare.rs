use serde::{Deserialize, Serialize};

use super::metrics::RunMetrics;
use super::run::run_scenario;
use super::scenario::Scenario;
use super::HarnessError;
use crate::orchestrator::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRun {
    pub config: String,
    pub metrics: RunMetrics,
}

/// `first − other` for each later config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub config: String,
    pub against: String,
    pub mean_delay_delta_s: Option<f64>,
    pub percent_detected_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub runs: Vec<NamedRun>,
    pub deltas: Vec<Delta>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

pub fn deltas(runs: &[NamedRun]) -> Vec<Delta> {
    let Some((first, rest)) = runs.split_first() else { return Vec::new() };
    let a = &first.metrics.aggregates;
    rest.iter()
        .map(|other| {
            let b = &other.metrics.aggregates;
            Delta {
                config: first.config.clone(),
                against: other.config.clone(),
                mean_delay_delta_s: diff(a.mean_delay_s, b.mean_delay_s),
                percent_detected_delta: diff(a.percent_detected, b.percent_detected),
            }
        })
        .collect()
}

pub fn compare_configs(scenario: &Scenario, configs: &[(String, EngineConfig)]) -> Result<Comparison, HarnessError> {
    if configs.len() < 2 {
        return Err(HarnessError::Invalid("comparison needs at least two configs".into()));
    }
    let runs = configs
        .iter()
        .map(|(name, config)| {
            Ok(NamedRun { config: name.clone(), metrics: run_scenario(scenario, config)?.metrics })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(Comparison { scenario: scenario.label().to_owned(), deltas: deltas(&runs), runs })
}

/// Scenario and config with every seed replaced by `seed`.
pub fn reseeded(scenario: &Scenario, config: &EngineConfig, seed: u64) -> (Scenario, EngineConfig) {
    let mut s = scenario.clone();
    s.seed = seed;
    (s, EngineConfig { seed, ..config.clone() })
}

/// Per-run summary row for seed and parameter sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub config: String,
    pub seed: u64,
    pub vote_fraction_base: f64,
    pub boost_delta: f64,
    pub decay_millis: u64,
    pub mean_delay_s: Option<f64>,
    pub mean_confirm_delay_s: Option<f64>,
    pub percent_detected: Option<f64>,
    pub implicit_share: Option<f64>,
    pub false_positive_queries: usize,
    pub query_count: usize,
}

impl SummaryRow {
    pub fn new(scenario: &Scenario, config_name: &str, config: &EngineConfig, metrics: &RunMetrics) -> Self {
        let a = &metrics.aggregates;
        Self {
            scenario: scenario.label().to_owned(),
            config: config_name.to_owned(),
            seed: scenario.seed,
            vote_fraction_base: config.detector.vote_fraction_base,
            boost_delta: config.detector.boost_delta,
            decay_millis: config.detector.decay_millis,
            mean_delay_s: a.mean_delay_s,
            mean_confirm_delay_s: a.mean_confirm_delay_s,
            percent_detected: a.percent_detected,
            implicit_share: a.implicit_share,
            false_positive_queries: a.false_positive_queries,
            query_count: a.query_count,
        }
    }
}

pub fn write_summary_csv<W: std::io::Write>(w: W, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean over the rows that have a value.
pub fn mean_of(rows: &[SummaryRow], field: impl Fn(&SummaryRow) -> Option<f64>) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().filter_map(field).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Detector parameter grid. An empty axis keeps the base config value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    pub vote_fraction_base: Vec<f64>,
    pub boost_delta: Vec<f64>,
    pub decay_millis: Vec<u64>,
}

impl SweepGrid {
    /// Fills unspecified axes from `base`; fails if no axis was given or a
    /// point is not a valid detector config.
    pub fn points(&self, base: &EngineConfig) -> Result<Vec<EngineConfig>, HarnessError> {
        if self.vote_fraction_base.is_empty() && self.boost_delta.is_empty() && self.decay_millis.is_empty() {
            return Err(HarnessError::Invalid("sweep grid is empty".into()));
        }
        let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let d = &base.detector;
        let decays = if self.decay_millis.is_empty() { vec![d.decay_millis] } else { self.decay_millis.clone() };
        let mut out = Vec::new();
        for &f in &or(&self.vote_fraction_base, d.vote_fraction_base) {
            for &b in &or(&self.boost_delta, d.boost_delta) {
                for &decay in &decays {
                    let mut c = base.clone();
                    c.detector.vote_fraction_base = f;
                    c.detector.boost_delta = b;
                    c.detector.decay_millis = decay;
                    c.validate().map_err(|e| HarnessError::Invalid(format!("grid point ({f}, {b}, {decay}): {e}")))?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }
}
