use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use errwatch_core::event::{read_ndjson, write_ndjson, EventError, Timestamp};
use errwatch_core::harness::{
    compare_configs, mean_of, replay, reseeded, run_scenario, run_scenario_with, write_metrics_csv, write_summary_csv,
    HarnessError, PolicyResponder, Response, ResponseSource, RunMetrics, RunOutput, Scenario, ScenarioError,
    SummaryRow, SweepGrid,
};
use errwatch_core::intent::{IntentBackend, RuleBasedBackend, ServiceBackend};
use errwatch_core::orchestrator::{ConfigError, EngineConfig, EngineError, QueryPool};
use errwatch_core::detector::write_flag_csv;

use crate::{Cli, Command, Format, Global};

/// Bad input from the user; exits with 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let invalid = e.chain().any(|c| {
        c.is::<Invalid>()
            || c.is::<ScenarioError>()
            || c.is::<ConfigError>()
            || c.is::<EventError>()
            || matches!(
                c.downcast_ref::<HarnessError>(),
                Some(HarnessError::Scenario(_) | HarnessError::Invalid(_) | HarnessError::ReplayDivergence { .. })
            )
            || matches!(c.downcast_ref::<EngineError>(), Some(EngineError::Config(_)))
    });
    if invalid {
        2
    } else {
        1
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Run { scenario, config, interactive, intent_endpoint } => {
            run(g, scenario, config, *interactive, intent_endpoint.as_deref())
        }
        Command::Compare { scenario, config_a, config_b, seeds } => compare(g, scenario, [config_a, config_b], seeds.as_deref()),
        Command::Sweep { scenario, config, vote_fraction, boost_delta, decay_millis } => {
            let grid = SweepGrid {
                vote_fraction_base: vote_fraction.clone(),
                boost_delta: boost_delta.clone(),
                decay_millis: decay_millis.clone(),
            };
            sweep(g, scenario, config, &grid)
        }
        Command::Validate { files } => validate(files),
        Command::Replay { trace, manifest } => replay_cmd(g, trace, manifest.as_deref()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_scenario(path: &Path, g: &Global) -> Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn load_config(path: &Path, g: &Global) -> Result<EngineConfig> {
    let mut c = EngineConfig::load(path)?;
    // manifests must still resolve the pool when replayed from elsewhere
    if let Some(pool) = &c.query_pool_path {
        if let Ok(abs) = pool.canonicalize() {
            c.query_pool_path = Some(abs);
        }
    }
    c.query_pool()?;
    if let Some(seed) = g.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn out_dir(g: &Global) -> Result<&Path> {
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    Ok(&g.out)
}

fn wants(g: &Global, f: Format) -> bool {
    g.format.is_none_or(|x| x == f)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Everything needed to replay a trace.
#[derive(Serialize, Deserialize)]
struct Manifest {
    scenario_name: String,
    config_name: String,
    scenario: Scenario,
    config: EngineConfig,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct RunReport {
    scenario: String,
    config: String,
    seed: u64,
    metrics: RunMetrics,
}

fn summary_line(scenario: &str, config: &str, m: &RunMetrics) -> String {
    let a = &m.aggregates;
    let perceived = m.per_error.iter().filter(|e| e.perceived).count();
    let found = m.per_error.iter().filter(|e| e.perceived && e.detected).count();
    let secs = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.2} s"));
    format!(
        "{scenario}/{config}: {found}/{perceived} perceived errors detected, mean delay {} (confirmed {}), {} queries ({} false positive)",
        secs(a.mean_delay_s),
        secs(a.mean_confirm_delay_s),
        a.query_count,
        a.false_positive_queries
    )
}

/// Reads query answers from stdin; an empty line or EOF stays silent.
struct StdinResponder {
    latency_millis: u64,
}

impl ResponseSource for StdinResponder {
    fn respond(&mut self, t: Timestamp, query: &str, _error_pending: bool) -> Option<Response> {
        eprint!("[{t}] robot: {query}\n> ");
        let _ = std::io::stderr().flush();
        let mut line = String::new();
        std::io::stdin().lock().read_line(&mut line).ok()?;
        let text = line.trim();
        (!text.is_empty()).then(|| Response { latency_millis: self.latency_millis, text: text.to_owned() })
    }
}

fn run(g: &Global, scenario_path: &Path, config_path: &Path, interactive: bool, endpoint: Option<&str>) -> Result<()> {
    let scenario = load_scenario(scenario_path, g)?;
    let config = load_config(config_path, g)?;
    let (sname, cname) = (scenario.label().to_owned(), stem(config_path));

    let rules = RuleBasedBackend::new(scenario.lexicon());
    let intents: Arc<dyn IntentBackend> = match endpoint {
        Some(url) => Arc::new(ServiceBackend::new(url, errwatch_core::intent::DEFAULT_DEADLINE, rules)),
        None => Arc::new(rules),
    };
    let out: RunOutput = if interactive {
        let mut stdin = StdinResponder { latency_millis: scenario.human.query_response_latency_millis };
        run_scenario_with(&scenario, &config, intents, &mut stdin)?
    } else {
        run_scenario_with(&scenario, &config, intents, &mut PolicyResponder::new(&scenario.human))?
    };

    let dir = out_dir(g)?;
    write_ndjson(create(&dir.join("trace.ndjson"))?, &out.trace)?;
    write_flag_csv(create(&dir.join("flags.csv"))?, &out.flags)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest { scenario_name: sname.clone(), config_name: cname.clone(), scenario: scenario.clone(), config },
    )?;
    write_metrics(g, dir, &sname, &cname, scenario.seed, &out.metrics)?;
    println!("{}", summary_line(&sname, &cname, &out.metrics));
    Ok(())
}

fn write_metrics(g: &Global, dir: &Path, sname: &str, cname: &str, seed: u64, m: &RunMetrics) -> Result<()> {
    if wants(g, Format::Json) {
        let report = RunReport { scenario: sname.into(), config: cname.into(), seed, metrics: m.clone() };
        write_json(&dir.join("metrics.json"), &report)?;
    }
    if wants(g, Format::Csv) {
        write_metrics_csv(create(&dir.join("metrics.csv"))?, &[(sname, cname, m)])?;
    }
    Ok(())
}

fn parse_seeds(range: &str) -> Result<Vec<u64>> {
    let bad = || Invalid(format!("seed range {range:?} is not of the form a..b"));
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad().into());
    }
    Ok((a..=b).collect())
}

#[derive(Serialize)]
struct SeedSummary {
    config: String,
    runs: usize,
    mean_delay_s: Option<f64>,
    mean_confirm_delay_s: Option<f64>,
    percent_detected: Option<f64>,
    implicit_share: Option<f64>,
    false_positive_queries: f64,
}

/// One seed, both configs side by side.
#[derive(Serialize, Clone)]
struct PairedRow {
    seed: u64,
    config_a: String,
    config_b: String,
    mean_delay_a_s: Option<f64>,
    mean_delay_b_s: Option<f64>,
    mean_delay_delta_s: Option<f64>,
    percent_detected_a: Option<f64>,
    percent_detected_b: Option<f64>,
    false_positive_queries_a: usize,
    false_positive_queries_b: usize,
}

#[derive(Serialize)]
struct SeedSweep {
    scenario: String,
    seeds: Vec<PairedRow>,
    runs: Vec<SummaryRow>,
    summary: Vec<SeedSummary>,
    mean_delay_delta_s: Option<f64>,
}

fn compare(g: &Global, scenario_path: &Path, config_paths: [&PathBuf; 2], seeds: Option<&str>) -> Result<()> {
    let scenario = load_scenario(scenario_path, g)?;
    let mut configs = Vec::new();
    for p in config_paths {
        let mut name = stem(p);
        if configs.iter().any(|(n, _): &(String, _)| *n == name) {
            name = format!("{name}_b");
        }
        configs.push((name, load_config(p, g)?));
    }
    let dir = out_dir(g)?;
    let sname = scenario.label().to_owned();

    let Some(range) = seeds else {
        let cmp = compare_configs(&scenario, &configs)?;
        if wants(g, Format::Json) {
            write_json(&dir.join("comparison.json"), &cmp)?;
        }
        if wants(g, Format::Csv) {
            let rows: Vec<_> = cmp.runs.iter().map(|r| (sname.as_str(), r.config.as_str(), &r.metrics)).collect();
            write_metrics_csv(create(&dir.join("comparison.csv"))?, &rows)?;
        }
        for r in &cmp.runs {
            println!("{}", summary_line(&sname, &r.config, &r.metrics));
        }
        for d in &cmp.deltas {
            let fmt = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:+.2}"));
            println!(
                "delta {} - {}: mean delay {} s, percent detected {}",
                d.config,
                d.against,
                fmt(d.mean_delay_delta_s),
                fmt(d.percent_detected_delta)
            );
        }
        return Ok(());
    };

    let seeds = parse_seeds(range)?;
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..configs.len()).map(move |c| (s, c))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(seed, ci)| {
            let (name, config) = &configs[ci];
            let (s, c) = reseeded(&scenario, config, seed);
            let out = run_scenario(&s, &c)?;
            Ok(SummaryRow::new(&s, name, &c, &out.metrics))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let summary: Vec<SeedSummary> = configs
        .iter()
        .map(|(name, _)| {
            let mine: Vec<SummaryRow> = rows.iter().filter(|r| &r.config == name).cloned().collect();
            SeedSummary {
                config: name.clone(),
                runs: mine.len(),
                mean_delay_s: mean_of(&mine, |r| r.mean_delay_s),
                mean_confirm_delay_s: mean_of(&mine, |r| r.mean_confirm_delay_s),
                percent_detected: mean_of(&mine, |r| r.percent_detected),
                implicit_share: mean_of(&mine, |r| r.implicit_share),
                false_positive_queries: mean_of(&mine, |r| Some(r.false_positive_queries as f64)).unwrap_or(0.0),
            }
        })
        .collect();
    let mean_delay_delta_s = summary[0].mean_delay_s.zip(summary[1].mean_delay_s).map(|(a, b)| a - b);
    for s in &summary {
        let v = s.mean_delay_s.map_or("n/a".to_owned(), |v| format!("{v:.2} s"));
        println!("{sname}/{}: {} seeds, mean delay {v}", s.config, s.runs);
    }
    if let Some(d) = mean_delay_delta_s {
        println!("delta {} - {}: mean delay {d:+.2} s", summary[0].config, summary[1].config);
    }
    let paired: Vec<PairedRow> = rows
        .chunks(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            PairedRow {
                seed: a.seed,
                config_a: a.config.clone(),
                config_b: b.config.clone(),
                mean_delay_a_s: a.mean_delay_s,
                mean_delay_b_s: b.mean_delay_s,
                mean_delay_delta_s: a.mean_delay_s.zip(b.mean_delay_s).map(|(x, y)| x - y),
                percent_detected_a: a.percent_detected,
                percent_detected_b: b.percent_detected,
                false_positive_queries_a: a.false_positive_queries,
                false_positive_queries_b: b.false_positive_queries,
            }
        })
        .collect();
    if wants(g, Format::Csv) {
        let mut w = csv::Writer::from_writer(create(&dir.join("seeds.csv"))?);
        for row in &paired {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    if wants(g, Format::Json) {
        let sweep = SeedSweep { scenario: sname, seeds: paired, runs: rows, summary, mean_delay_delta_s };
        write_json(&dir.join("seeds.json"), &sweep)?;
    }
    Ok(())
}

fn sweep(g: &Global, scenario_path: &Path, config_path: &Path, grid: &SweepGrid) -> Result<()> {
    let scenario = load_scenario(scenario_path, g)?;
    let base = load_config(config_path, g)?;
    let points = grid.points(&base)?;
    let cname = stem(config_path);
    let mut rows = Vec::with_capacity(points.len());
    for c in &points {
        let out = run_scenario(&scenario, c)?;
        let row = SummaryRow::new(&scenario, &cname, c, &out.metrics);
        println!(
            "vote_fraction_base={} boost_delta={} decay_millis={}: {} queries, {} false positive",
            row.vote_fraction_base, row.boost_delta, row.decay_millis, row.query_count, row.false_positive_queries
        );
        rows.push(row);
    }
    let dir = out_dir(g)?;
    if wants(g, Format::Csv) {
        write_summary_csv(create(&dir.join("sweep.csv"))?, &rows)?;
    }
    if wants(g, Format::Json) {
        write_json(&dir.join("sweep.json"), &rows)?;
    }
    Ok(())
}

fn validate(files: &[PathBuf]) -> Result<()> {
    let mut failed = 0;
    for path in files {
        match validate_one(path) {
            Ok(what) => println!("ok {}: {what}", path.display()),
            Err(e) => {
                eprintln!("invalid {}: {e:#}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!(Invalid(format!("{failed} of {} files failed validation", files.len())));
    }
    Ok(())
}

fn validate_one(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Invalid(format!("not JSON: {e}")))?;
    if value.get("schema").is_some() {
        let s = Scenario::load(path)?;
        Ok(format!("scenario {} with {} actions and {} errors", s.label(), s.actions.len(), s.errors.len()))
    } else if value.get("queries").is_some() {
        let pool = QueryPool::load(path)?;
        Ok(format!("query pool with {} templates", pool.templates().len()))
    } else {
        let c = EngineConfig::load(path)?;
        c.query_pool()?;
        Ok(format!("{:?} engine config", c.mode).to_lowercase())
    }
}

fn replay_cmd(g: &Global, trace_path: &Path, manifest: Option<&Path>) -> Result<()> {
    let dir = trace_path.parent().unwrap_or_else(|| Path::new("."));
    let manifest_path = manifest.map_or_else(|| dir.join("manifest.json"), Path::to_path_buf);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Invalid(format!("reading {}: {e}", manifest_path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", manifest_path.display())))?;
    m.scenario.validate()?;
    m.config.validate()?;

    let file = fs::File::open(trace_path).map_err(|e| Invalid(format!("reading {}: {e}", trace_path.display())))?;
    let trace = read_ndjson(std::io::BufReader::new(file))?;
    let out = replay(&m.scenario, &m.config, &trace)?;

    let recorded = dir.join("metrics.json");
    if recorded.exists() {
        let report: RunReport = serde_json::from_str(&fs::read_to_string(&recorded)?)
            .map_err(|e| Invalid(format!("{}: {e}", recorded.display())))?;
        if report.metrics != out.metrics {
            return Err(anyhow!(Invalid("replayed metrics differ from the recorded metrics.json".into())));
        }
    }
    let out_dir = out_dir(g)?;
    write_metrics(g, out_dir, &m.scenario_name, &m.config_name, m.scenario.seed, &out.metrics)?;
    println!("replayed {} events", trace.len());
    println!("{}", summary_line(&m.scenario_name, &m.config_name, &out.metrics));
    Ok(())
}
