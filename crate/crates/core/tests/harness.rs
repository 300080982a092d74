use std::path::PathBuf;

use errwatch_core::event::{CommandKind, DetectionMethod, Payload, QueryOutcome, SayRole, Timestamp};
use errwatch_core::harness::*;
use errwatch_core::orchestrator::{EngineConfig, Mode};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(root().join("scenarios").join(format!("{name}.json"))).unwrap()
}

fn config(name: &str) -> EngineConfig {
    EngineConfig::load(root().join("configs").join(format!("{name}.json"))).unwrap()
}

fn outcome<'a>(m: &'a RunMetrics, id: &str) -> &'a ErrorOutcome {
    m.per_error.iter().find(|e| e.error_id == id).unwrap()
}

#[test]
fn shipped_scenarios_load() {
    let a = scenario("assembly");
    assert_eq!(a.errors.len(), 2);
    assert_eq!(a.errors[0].kind, ErrorKind::Physical);
    assert_eq!(a.errors[1].kind, ErrorKind::Conceptual);

    let p = scenario("packing");
    let stall = p.actions.iter().find(|x| x.is_error.as_deref() == Some("stall")).unwrap();
    assert_eq!(stall.duration_millis, 7000);
    assert!(!stall.moving);
    assert!(!p.perceives("stall"));
    assert!(p.perceives("misplaced_nuts"));
}

// Hand trace of assembly under proactive mode (seed 4 draws AU for the
// first error and speech for the second):
//   grasp_pipe_2 starts at 12000 + 2500 = 14500.
//   burst from 16000; 21 flagged frames (16000..=18000) fire at 18000.
//   query at 18000, "no" at 19000, recovery 19000..23000, so the script
//   is held from 18000 to 23000 (+5000).
//   grasp_pipe_4 at script 38500 -> wall 43500; "wait, huh" at 45000,
//   query, "no" at 46000.
#[test]
fn assembly_proactive_hand_trace() {
    let out = run_scenario(&scenario("assembly"), &config("proactive")).unwrap();
    let m = &out.metrics;
    let a = outcome(m, "failed_grasp");
    assert_eq!(a.occurred_at, Some(Timestamp(14_500)));
    assert_eq!(a.method, Some(DetectionMethod::ImplicitAu));
    assert_eq!((a.t_signal, a.t_detected), (Some(Timestamp(18_000)), Some(Timestamp(19_000))));
    assert_eq!(a.delay_s, Some(3.5));
    assert_eq!(a.confirm_delay_s, Some(4.5));

    let b = outcome(m, "wrong_pipe");
    assert_eq!(b.occurred_at, Some(Timestamp(43_500)));
    assert_eq!(b.method, Some(DetectionMethod::ImplicitSpeech));
    assert_eq!((b.t_signal, b.t_detected), (Some(Timestamp(45_000)), Some(Timestamp(46_000))));

    assert_eq!(m.aggregates.mean_delay_s, Some(2.5));
    assert_eq!(m.aggregates.percent_detected, Some(100.0));
    assert_eq!(m.aggregates.implicit_au_share, Some(50.0));
    assert_eq!(m.aggregates.implicit_speech_share, Some(50.0));
    assert_eq!(m.aggregates.query_count, 2);
    assert_eq!(m.aggregates.false_positive_queries, 0);
}

// Reactive: report at 14500 + 5000 = 19500, recovery to 23500 (+4000),
// grasp_pipe_4 at 42500, report at 47500.
#[test]
fn assembly_reactive_hand_trace() {
    let out = run_scenario(&scenario("assembly"), &config("reactive")).unwrap();
    let m = &out.metrics;
    let a = outcome(m, "failed_grasp");
    assert_eq!((a.method, a.t_detected), (Some(DetectionMethod::Explicit), Some(Timestamp(19_500))));
    let b = outcome(m, "wrong_pipe");
    assert_eq!(b.occurred_at, Some(Timestamp(42_500)));
    assert_eq!(b.t_detected, Some(Timestamp(47_500)));
    assert_eq!(m.aggregates.mean_delay_s, Some(5.0));
    assert_eq!(m.aggregates.query_count, 0);
    assert_eq!(m.aggregates.implicit_share, Some(0.0));
}

#[test]
fn reports_are_withheld_once_resolved() {
    let out = run_scenario(&scenario("assembly"), &config("proactive")).unwrap();
    let reports = out
        .trace
        .iter()
        .filter(|e| matches!(&e.payload, Payload::Utterance(u) if u.text.contains("mistake") || u.text.contains("wrong")))
        .count();
    assert_eq!(reports, 0);
}

#[test]
fn unperceived_error_gets_no_reaction() {
    let s = scenario("packing");
    let out = run_scenario(&s, &config("proactive")).unwrap();
    let stall = outcome(&out.metrics, "stall");
    assert!(stall.occurred_at.is_some());
    assert!(!stall.detected);
    assert!(!out.trace.iter().any(|e| matches!(&e.payload, Payload::Utterance(u) if u.text.contains("stop"))));
    assert_eq!(out.metrics.aggregates.percent_detected, Some(100.0));
}

#[test]
fn silent_human_times_out_queries() {
    let mut s = scenario("assembly");
    s.human.query_response_policy = ResponsePolicy::Silent;
    s.human.speech_reaction.probability = 0.0;
    let c = config("proactive");
    let out = run_scenario(&s, &c).unwrap();
    let exchanges: Vec<_> = out
        .trace
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::QueryExchange(x) => Some(x.clone()),
            _ => None,
        })
        .collect();
    assert!(!exchanges.is_empty());
    for x in &exchanges {
        assert!(matches!(x.outcome, QueryOutcome::TimedOut | QueryOutcome::Preempted), "{x:?}");
        assert!(x.t.0 - x.asked_at.0 <= c.verification_timeout_ms + 100);
    }
    // the explicit report still gets through
    assert_eq!(out.metrics.aggregates.percent_detected, Some(100.0));
}

#[test]
fn null_scenario_is_quiet() {
    let mut s = scenario("assembly");
    s.errors.clear();
    for a in &mut s.actions {
        a.is_error = None;
    }
    let out = run_scenario(&s, &config("proactive")).unwrap();
    assert_eq!(out.metrics.aggregates.query_count, 0);
    assert!(out.trace.iter().all(|e| !matches!(e.payload, Payload::Detection(_))));
    assert_eq!(out.metrics.aggregates.percent_detected, None);
}

#[test]
fn runs_are_byte_deterministic_and_replay() {
    for name in ["assembly", "packing", "noisy"] {
        let s = scenario(name);
        let c = config("proactive");
        let a = run_scenario(&s, &c).unwrap();
        let b = run_scenario(&s, &c).unwrap();
        let lines = |o: &RunOutput| o.trace.iter().map(|e| e.to_json_line()).collect::<Vec<_>>();
        assert_eq!(lines(&a), lines(&b));
        assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());

        let r = replay(&s, &c, &a.trace).unwrap();
        assert_eq!(r.metrics, a.metrics);
        assert_eq!(compute_metrics(&s, &a.trace), a.metrics);
    }
}

#[test]
fn replay_through_ndjson_round_trip() {
    let s = scenario("packing");
    let c = config("proactive");
    let out = run_scenario(&s, &c).unwrap();
    let mut buf = Vec::new();
    errwatch_core::event::write_ndjson(&mut buf, &out.trace).unwrap();
    let back = errwatch_core::event::read_ndjson(buf.as_slice()).unwrap();
    assert_eq!(replay(&s, &c, &back).unwrap().metrics, out.metrics);
}

#[test]
fn replay_detects_tampering() {
    let s = scenario("assembly");
    let c = config("proactive");
    let mut trace = run_scenario(&s, &c).unwrap().trace;
    let i = trace.iter().position(|e| matches!(e.payload, Payload::Detection(_))).unwrap();
    trace.remove(i);
    assert!(matches!(replay(&s, &c, &trace), Err(HarnessError::ReplayDivergence { .. })));
}

#[test]
fn detections_are_conserved() {
    for name in ["assembly", "packing", "noisy"] {
        let out = run_scenario(&scenario(name), &config("proactive")).unwrap();
        let mut matched = std::collections::BTreeSet::new();
        for e in &out.trace {
            if let Payload::Detection(d) = &e.payload {
                assert!(d.t_signal <= d.t_detected);
                assert_eq!(e.t, d.t_detected);
                if let Some(id) = &d.matched_error_id {
                    assert!(matched.insert(id.clone()), "{id} matched twice");
                }
            }
        }
    }
}

#[test]
fn every_query_is_preceded_by_a_pause() {
    let out = run_scenario(&scenario("noisy"), &config("proactive")).unwrap();
    let mut paused = false;
    for e in &out.trace {
        if let Payload::Command(c) = &e.payload {
            match &c.kind {
                CommandKind::Pause | CommandKind::Stop => paused = true,
                CommandKind::Resume => paused = false,
                CommandKind::Say { role: SayRole::Query, .. } => assert!(paused),
                _ => {}
            }
        }
    }
}

#[test]
fn compare_direction_and_identity() {
    let s = scenario("assembly");
    let cmp = compare_configs(&s, &[("proactive".into(), config("proactive")), ("reactive".into(), config("reactive"))])
        .unwrap();
    assert!(cmp.deltas[0].mean_delay_delta_s.unwrap() < 0.0);
    assert_eq!(cmp.deltas[0].percent_detected_delta, Some(0.0));

    let same = compare_configs(&s, &[("a".into(), config("proactive")), ("b".into(), config("proactive"))]).unwrap();
    assert_eq!(same.deltas[0].mean_delay_delta_s, Some(0.0));
    assert!(compare_configs(&s, &[("a".into(), config("proactive"))]).is_err());
}

#[test]
fn seed_sweep_aggregate_is_mean_of_rows() {
    let s = scenario("assembly");
    let c = config("proactive");
    let rows: Vec<SummaryRow> = (0..20)
        .map(|seed| {
            let (s, c) = reseeded(&s, &c, seed);
            SummaryRow::new(&s, "proactive", &c, &run_scenario(&s, &c).unwrap().metrics)
        })
        .collect();
    assert_eq!(rows.len(), 20);
    let by_hand: f64 = rows.iter().map(|r| r.mean_delay_s.unwrap()).sum::<f64>() / 20.0;
    assert!((mean_of(&rows, |r| r.mean_delay_s).unwrap() - by_hand).abs() < 1e-12);
}

#[test]
fn sweep_grid_points() {
    let base = config("proactive");
    assert!(SweepGrid::default().points(&base).is_err());
    let grid = SweepGrid { vote_fraction_base: vec![0.3, 0.5, 0.7], ..Default::default() };
    let points = grid.points(&base).unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().all(|p| p.detector.boost_delta == base.detector.boost_delta));
    let bad = SweepGrid { vote_fraction_base: vec![1.5], ..Default::default() };
    assert!(bad.points(&base).is_err());
}

#[test]
fn false_positives_fall_as_the_vote_fraction_rises() {
    let s = scenario("noisy");
    let grid = SweepGrid { vote_fraction_base: vec![0.3, 0.5, 0.7], ..Default::default() };
    let fp: Vec<usize> = grid
        .points(&config("proactive"))
        .unwrap()
        .iter()
        .map(|c| run_scenario(&s, c).unwrap().metrics.aggregates.false_positive_queries)
        .collect();
    assert!(fp.windows(2).all(|w| w[0] >= w[1]), "{fp:?}");
}

#[test]
fn metrics_csv_has_one_row_per_error() {
    let s = scenario("assembly");
    let out = run_scenario(&s, &config("proactive")).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &[("assembly", "proactive", &out.metrics)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "scenario,config,error_id,kind,detected,method,delay_s");
    assert_eq!(lines[1], "assembly,proactive,failed_grasp,physical,true,implicit_au,3.5");
    assert_eq!(lines.len(), 3);
}

#[test]
fn reactive_mode_never_queries_even_with_noise() {
    let c = EngineConfig { mode: Mode::Reactive, ..config("proactive") };
    let out = run_scenario(&scenario("noisy"), &c).unwrap();
    assert_eq!(out.metrics.aggregates.query_count, 0);
}
