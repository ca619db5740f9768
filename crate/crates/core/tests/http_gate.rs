//! The HTTP gate backend against a local mock server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use netmoe::config::SystemConfig;
use netmoe::experts::registry_build;
use netmoe::gate::http::GateConfig;
use netmoe::gate::{decide, GateError, HttpBackend};

struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection, in order, and records
/// what each request carried.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body = serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null);
            log.lock().unwrap().push(Seen { path, auth, body });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn completion(tool: &str, args: serde_json::Value) -> String {
    serde_json::json!({
        "choices": [{
            "message": {
                "role": "assistant",
                "content": "The operator wants fair rates under imperfect channel knowledge.",
                "tool_calls": [{
                    "id": "call_0",
                    "type": "function",
                    "function": {"name": tool, "arguments": args.to_string()}
                }]
            }
        }]
    })
    .to_string()
}

fn config(url: &str, retries: u32) -> GateConfig {
    GateConfig {
        base_url: url.to_string(),
        retries,
        timeout_secs: 5,
        ..GateConfig::default()
    }
}

#[test]
fn retries_server_error_then_parses_tool_call() {
    let ok = completion(
        "infer_expert_with_params",
        serde_json::json!({"expert_name": "JCC_MinR_Rob"}),
    );
    let (url, seen, handle) = serve(vec![(500, "{}".into()), (200, ok)]);
    let backend = HttpBackend::with_key(config(&url, 2), "sk-test-123".into());
    let reg = registry_build(&SystemConfig::default());
    let d = decide(
        &backend,
        &reg,
        "keep every user's rate fair under imperfect channels",
    )
    .unwrap();
    handle.join().unwrap();
    assert_eq!(d.selected_names(), vec!["JCC_MinR_Rob"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    for s in seen.iter() {
        assert_eq!(s.path, "/chat/completions");
        assert_eq!(s.auth.as_deref(), Some("Bearer sk-test-123"));
        assert_eq!(s.body["temperature"], 0.0);
        assert_eq!(s.body["messages"][0]["role"], "system");
        assert!(s.body["tools"].as_array().is_some_and(|t| !t.is_empty()));
    }
}

#[test]
fn exhausted_retries_are_unavailable() {
    let (url, seen, handle) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
    let backend = HttpBackend::with_key(config(&url, 1), "k".into());
    let reg = registry_build(&SystemConfig::default());
    let err = decide(&backend, &reg, "maximize the sum rate").unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, GateError::Unavailable(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_error_is_not_retried() {
    let (url, seen, handle) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let backend = HttpBackend::with_key(config(&url, 3), "k".into());
    let reg = registry_build(&SystemConfig::default());
    assert!(decide(&backend, &reg, "maximize the sum rate").is_err());
    handle.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unknown_expert_in_reply_is_rejected() {
    let bad = completion(
        "infer_expert_with_params",
        serde_json::json!({"expert_name": "JCC_Fastest"}),
    );
    let (url, _, handle) = serve(vec![(200, bad)]);
    let backend = HttpBackend::with_key(config(&url, 0), "k".into());
    let reg = registry_build(&SystemConfig::default());
    let err = decide(&backend, &reg, "go fast").unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, GateError::UnknownExpert(_)), "{err:?}");
}
