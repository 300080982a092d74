use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use errwatch_core::event::{Timestamp, Utterance};
use errwatch_core::intent::{BackendRequest, Intent, IntentBackend, Polarity, RuleBasedBackend, ServiceBackend, TaskLexicon};

/// Serves one request with `body` after `delay`; hands back the decoded request.
fn stub(body: &'static str, delay: Duration) -> (String, thread::JoinHandle<Option<BackendRequest>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/classify", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().ok()?;
        let mut reader = BufReader::new(stream.try_clone().ok()?);
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).ok()?;
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().ok()?;
            }
        }
        let mut req = vec![0; len];
        reader.read_exact(&mut req).ok()?;
        thread::sleep(delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        serde_json::from_slice(&req).ok()
    });
    (url, handle)
}

fn rules() -> RuleBasedBackend {
    RuleBasedBackend::new(TaskLexicon::builtin("assembly").unwrap())
}

fn said(text: &str) -> Utterance {
    Utterance::human(Timestamp(0), text)
}

#[test]
fn service_answer_is_used() {
    let (url, h) = stub(r#"{"category":"irrelevant"}"#, Duration::ZERO);
    let backend = ServiceBackend::new(url, Duration::from_secs(2), rules());
    // the rules would call this a reaction
    assert_eq!(backend.classify(&said("oops"), false), Intent::Irrelevant);
    let req = h.join().unwrap().unwrap();
    assert_eq!(req, BackendRequest { text: "oops".into(), task: "assembly".into(), query_pending: false });
}

#[test]
fn slow_service_falls_back_within_deadline() {
    let (url, h) = stub(r#"{"category":"irrelevant"}"#, Duration::from_millis(1500));
    let backend = ServiceBackend::new(url, Duration::from_millis(200), rules());
    let start = Instant::now();
    let intent = backend.classify(&said("no, not really"), true);
    assert!(start.elapsed() < Duration::from_millis(1200));
    assert!(matches!(intent, Intent::QueryResponse { polarity: Polarity::Negative, .. }));
    let _ = h.join();
}

#[test]
fn malformed_reply_falls_back() {
    let (url, h) = stub(r#"{"category":"telepathy"}"#, Duration::ZERO);
    let backend = ServiceBackend::new(url, Duration::from_secs(2), rules());
    assert!(matches!(backend.classify(&said("oops"), false), Intent::ImplicitErrorReaction { .. }));
    let _ = h.join();
}

#[test]
fn query_response_without_pending_query_falls_back() {
    let (url, h) = stub(r#"{"category":"query_response","payload":{"polarity":"affirmative","supplemental":null}}"#, Duration::ZERO);
    let backend = ServiceBackend::new(url, Duration::from_secs(2), rules());
    assert!(backend.request(&said("yes"), false).is_err());
    let _ = h.join();
}

#[test]
fn unreachable_service_falls_back() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = ServiceBackend::new(format!("http://127.0.0.1:{port}/"), Duration::from_millis(300), rules());
    assert!(matches!(backend.classify(&said("oops"), false), Intent::ImplicitErrorReaction { .. }));
}
