use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex, Once};
use std::thread;

use proptest::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use repairgraph::llm::{
    cassette_key, extract_code, extract_json, BackendConfig, BackendMode, CompletionRequest, Gateway, LlmError,
    MockBackend, MockPlaybook, RecordingBackend, ReplayBackend,
};

const KEY_ENV: &str = "REPAIRGRAPH_TEST_LLM_KEY";

fn set_key() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| std::env::set_var(KEY_ENV, "test-key-123"));
}

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

fn read_request(stream: &mut TcpStream) -> Captured {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (k, v) = line.split_once(':').unwrap();
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if k == "content-length" {
            len = v.parse().unwrap();
        }
        headers.push((k, v));
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Captured {
        request_line: request_line.trim_end().to_string(),
        headers,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    stream.flush().unwrap();
}

/// Serves one scripted response per connection and records each request.
fn serve(script: Vec<(&'static str, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/api/paas/v4", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let req = read_request(&mut stream);
            log.lock().unwrap().push(req);
            respond(&mut stream, status, &body);
        }
    });
    (base, seen, handle)
}

fn live_config(base_url: &str) -> BackendConfig {
    BackendConfig {
        base_url: base_url.to_string(),
        api_key_env: KEY_ENV.to_string(),
        mode: BackendMode::Live,
        max_retries: 2,
        backoff_ms: 10,
        timeout_s: 5.0,
        ..BackendConfig::default()
    }
}

fn reply(content: &str) -> String {
    json!({"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn wire_format() {
    set_key();
    let (base, seen, handle) = serve(vec![("200 OK", reply("```python\ndef f():\n    return 1\n```"))]);
    let gateway = Gateway::from_config(&live_config(&base)).unwrap();
    let out = gateway.complete_template("codegen", &[("task", "return one")]).unwrap();
    handle.join().unwrap();
    assert_eq!(extract_code(&out).unwrap(), "def f():\n    return 1");

    let seen = seen.lock().unwrap();
    let req = &seen[0];
    assert_eq!(req.request_line, "POST /api/paas/v4/chat/completions HTTP/1.1");
    let header = |name: &str| req.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());
    assert_eq!(header("authorization"), Some("Bearer test-key-123"));
    assert!(header("content-type").unwrap().starts_with("application/json"));
    assert_eq!(req.body["model"], "glm-4-flash");
    assert_eq!(req.body["temperature"], 0.0);
    assert!(req.body["max_tokens"].as_u64().unwrap() > 0);
    let messages = req.body["messages"].as_array().unwrap();
    assert_eq!(messages.last().unwrap()["role"], "user");
    assert!(messages.last().unwrap()["content"].as_str().unwrap().contains("return one"));
}

#[test]
fn server_errors_are_retried() {
    set_key();
    let (base, seen, handle) = serve(vec![
        ("503 Service Unavailable", "{}".into()),
        ("500 Internal Server Error", "{}".into()),
        ("200 OK", reply("ok")),
    ]);
    let gateway = Gateway::from_config(&live_config(&base)).unwrap();
    let out = gateway.complete_template("codegen", &[("task", "t")]).unwrap();
    handle.join().unwrap();
    assert_eq!(out, "ok");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_run_out() {
    set_key();
    let (base, _seen, handle) = serve(vec![
        ("502 Bad Gateway", "{}".into()),
        ("502 Bad Gateway", "{}".into()),
        ("502 Bad Gateway", "{}".into()),
    ]);
    let gateway = Gateway::from_config(&live_config(&base)).unwrap();
    let err = gateway.complete_template("codegen", &[("task", "t")]).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, LlmError::BackendUnavailable { attempts: 3, .. }), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    set_key();
    let (base, seen, handle) = serve(vec![("401 Unauthorized", r#"{"error":"bad key"}"#.into())]);
    let gateway = Gateway::from_config(&live_config(&base)).unwrap();
    let err = gateway.complete_template("codegen", &[("task", "t")]).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, LlmError::BackendUnavailable { attempts: 1, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint() {
    set_key();
    // Bind and drop to find a port nothing listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let gateway = Gateway::from_config(&live_config(&format!("http://127.0.0.1:{port}"))).unwrap();
    let err = gateway.complete_template("codegen", &[("task", "t")]).unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable { attempts: 3, .. }), "{err:?}");
}

#[test]
fn missing_key_fails_before_any_request() {
    let mut config = live_config("http://127.0.0.1:9");
    config.api_key_env = "REPAIRGRAPH_TEST_UNSET_KEY".into();
    let gateway = Gateway::from_config(&config).unwrap();
    let err = gateway.complete_template("codegen", &[("task", "t")]).unwrap_err();
    assert!(matches!(err, LlmError::AuthMissing(ref v) if v == "REPAIRGRAPH_TEST_UNSET_KEY"));
}

#[test]
fn mock_playbook_is_strictly_ordered() {
    let gateway = Gateway::mock(
        MockPlaybook::new()
            .push("divide two numbers", "```python\ndef divide(a, b):\n    return a / b\n```")
            .push("Write a bug report", "{}"),
    );
    let err = gateway.complete_template("bug_report_unknown", &[]).unwrap_err();
    assert!(matches!(err, LlmError::UnknownTemplate(_)));
    let err = gateway.complete_template("memory_create_summary", &[("bug_report", "x")]).unwrap_err();
    assert!(matches!(err, LlmError::MockMiss(_)));
    let out = gateway
        .complete_template("codegen", &[("task", "Please divide two numbers")])
        .unwrap();
    assert!(out.contains("def divide"));
}

#[test]
fn unbound_placeholder_is_rejected() {
    let gateway = Gateway::mock(MockPlaybook::new());
    let err = gateway.complete_template("code_fix", &[("code", "x")]).unwrap_err();
    assert!(matches!(err, LlmError::UnboundPlaceholder { .. }), "{err:?}");
}

#[test]
fn empty_cassette_misses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let config = BackendConfig {
        mode: BackendMode::Replay,
        cassette: Some(path),
        ..BackendConfig::default()
    };
    let gateway = Gateway::from_config(&config).unwrap();
    let err = gateway.complete_template("codegen", &[("task", "t")]).unwrap_err();
    assert!(matches!(err, LlmError::MockMiss(_)));
}

#[test]
fn record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    let inner = MockBackend::new(
        MockPlaybook::new()
            .push("area of a triangle", "first answer")
            .push("area of a triangle", "second answer")
            .push("Write a bug report", "report answer"),
    );
    let recorder = Gateway::new("glm-4-flash", Arc::new(RecordingBackend::new(inner, &path).unwrap()));
    let task = [("task", "area of a triangle")];
    let report_vars = [
        ("code", "c"),
        ("args", "[]"),
        ("status", "exception"),
        ("error_type", "E"),
        ("error_message", "m"),
        ("traceback", "tb"),
    ];
    let recorded = [
        recorder.complete_template("codegen", &task).unwrap(),
        recorder.complete_template("codegen", &task).unwrap(),
        recorder.complete_template("bug_report", &report_vars).unwrap(),
    ];
    drop(recorder);

    let replay = Gateway::new("glm-4-flash", Arc::new(ReplayBackend::load(&path).unwrap()));
    // Different prompts replay independently of call order.
    assert_eq!(replay.complete_template("bug_report", &report_vars).unwrap(), recorded[2]);
    assert_eq!(replay.complete_template("codegen", &task).unwrap(), recorded[0]);
    assert_eq!(replay.complete_template("codegen", &task).unwrap(), recorded[1]);
    assert!(matches!(
        replay.complete_template("codegen", &task),
        Err(LlmError::MockMiss(_))
    ));
}

#[test]
fn cassette_key_depends_on_template_and_prompt() {
    let a = CompletionRequest::from_prompt("codegen", "glm-4-flash", "p");
    let b = CompletionRequest::from_prompt("code_fix", "glm-4-flash", "p");
    let c = CompletionRequest::from_prompt("codegen", "glm-4-flash", "q");
    let a2 = CompletionRequest::from_prompt("codegen", "other-model", "p");
    assert_ne!(cassette_key(&a), cassette_key(&b));
    assert_ne!(cassette_key(&a), cassette_key(&c));
    assert_eq!(cassette_key(&a), cassette_key(&a2));
    assert_eq!(cassette_key(&a).len(), 64);
}

#[derive(Deserialize)]
struct FenceCase {
    name: String,
    reply: String,
    code: String,
}

#[test]
fn fence_corpus() {
    let cases: Vec<FenceCase> = serde_json::from_str(include_str!("fixtures/fenced_replies.json")).unwrap();
    for case in cases {
        assert_eq!(extract_code(&case.reply).unwrap(), case.code, "{}", case.name);
    }
}

#[test]
fn empty_fence_is_an_error() {
    assert!(matches!(extract_code("```python\n\n```"), Err(LlmError::EmptyCode)));
    assert!(matches!(extract_code("   "), Err(LlmError::EmptyCode)));
}

#[test]
fn json_extraction() {
    let v = extract_json("Report:\n```json\n{\"error_type\": \"ZeroDivisionError\"}\n```").unwrap();
    assert_eq!(v["error_type"], "ZeroDivisionError");
    let v = extract_json("The report is {\"a\": {\"b\": 1}} as requested.").unwrap();
    assert_eq!(v, json!({"a": {"b": 1}}));
    assert!(matches!(extract_json("no json here"), Err(LlmError::NoJsonFound)));
    assert!(matches!(extract_json("{\"a\": "), Err(LlmError::MalformedJson(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extraction_is_idempotent(reply in "(```[a-z]{0,6}\n)?[ -~\n]{0,120}(```)?[ -~\n]{0,20}") {
        if let Ok(code) = extract_code(&reply) {
            let again = extract_code(&code);
            // Code that itself contains a fence can legitimately extract further;
            // otherwise only leading indentation of a fenced block is dropped.
            if !code.contains("```") {
                prop_assert_eq!(again.unwrap(), code.trim_start());
            }
        }
    }

    #[test]
    fn fenced_code_round_trips(body in "[a-z_ =()+:]{1,40}(\n    [a-z_ =()+:]{1,40}){0,4}") {
        prop_assume!(!body.trim().is_empty());
        let want = body.trim_end().to_string();
        prop_assume!(!want.starts_with(' '));
        let reply = format!("Here you go:\n```python\n{body}\n```\nDone.");
        prop_assert_eq!(extract_code(&reply).unwrap(), want);
    }
}
