//! Live-wire tests for the HTTP transport against a local stub server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use review_arcade::gateway::{Backend, BackendConfig, BackendKind, CompletionRequest, GatewayError};

/// Serve `responses` (status, body) in order on a fresh localhost port,
/// recording each request body. Returns the endpoint URL.
fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let mut content_length = 0usize;
            let mut header_end = 0usize;
            loop {
                let n = stream.read(&mut chunk).unwrap();
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                if header_end == 0 {
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        header_end = pos + 4;
                        let headers = String::from_utf8_lossy(&buf[..pos]);
                        for line in headers.lines() {
                            if let Some(v) = line
                                .to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(str::trim)
                                .and_then(|v| v.parse::<usize>().ok())
                            {
                                content_length = v;
                            }
                        }
                    }
                }
                if header_end > 0 && buf.len() >= header_end + content_length {
                    break;
                }
            }
            seen.lock()
                .unwrap()
                .push(String::from_utf8_lossy(&buf[header_end..]).to_string());
            let reason = match status {
                200 => "OK",
                404 => "Not Found",
                429 => "Too Many Requests",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://127.0.0.1:{port}"), requests)
}

fn http_config(endpoint: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Http,
        name: "stub".to_string(),
        model_name: "stub-model".to_string(),
        endpoint: Some(endpoint.to_string()),
        temperature: 1.0,
        max_retries: 2,
        timeout_secs: 10,
        max_in_flight: 2,
        max_output_tokens: 128,
        script: None,
    }
}

fn chat_body(content: &str) -> String {
    format!(
        r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}],"usage":{{"prompt_tokens":7,"completion_tokens":3}}}}"#
    )
}

/// Env mutations are process-global; serialize the tests that touch them.
fn env_lock() -> std::sync::MutexGuard<'static, ()> {
    use std::sync::OnceLock;
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(Mutex::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

fn set_key() {
    std::env::set_var("REVIEW_ARCADE_API_KEY", "test-key");
}

#[test]
fn completes_against_chat_endpoint() {
    let _env = env_lock();
    set_key();
    let (endpoint, requests) = stub_server(vec![(200, chat_body("hello from stub"))]);
    let backend = Backend::http(http_config(&endpoint)).unwrap();
    let result = backend
        .complete(&CompletionRequest::new("system prompt", "user text"))
        .unwrap();
    assert_eq!(result.text, "hello from stub");
    assert_eq!(result.usage.prompt_tokens, 7);
    assert_eq!(result.attempts, 1);

    let bodies = requests.lock().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "stub-model");
    assert_eq!(sent["messages"][0]["role"], "system");
    assert_eq!(sent["messages"][1]["content"], "user text");
    assert_eq!(sent["temperature"], 1.0);
}

#[test]
fn retries_429_then_succeeds() {
    let _env = env_lock();
    set_key();
    let (endpoint, _) = stub_server(vec![
        (429, "{}".to_string()),
        (200, chat_body("second try")),
    ]);
    let backend = Backend::http(http_config(&endpoint)).unwrap();
    let result = backend
        .complete(&CompletionRequest::new("s", "u"))
        .unwrap();
    assert_eq!(result.text, "second try");
    assert_eq!(result.attempts, 2);
}

#[test]
fn non_retryable_status_fails_fast() {
    let _env = env_lock();
    set_key();
    let (endpoint, requests) = stub_server(vec![(404, "missing".to_string())]);
    let backend = Backend::http(http_config(&endpoint)).unwrap();
    match backend.complete(&CompletionRequest::new("s", "u")) {
        Err(GatewayError::Request { status, .. }) => assert_eq!(status, 404),
        other => panic!("expected request error, got {other:?}"),
    }
    assert_eq!(requests.lock().unwrap().len(), 1);
}

#[test]
fn missing_api_key_is_config_error() {
    // A backend name that maps to an unset per-backend variable, with the
    // global variable cleared as well.
    let _env = env_lock();
    std::env::remove_var("REVIEW_ARCADE_API_KEY");
    let config = BackendConfig {
        name: "no-key-backend".to_string(),
        ..http_config("http://127.0.0.1:9")
    };
    match Backend::http(config) {
        Err(GatewayError::MissingApiKey(_)) => {}
        Err(other) => panic!("expected missing key, got {other:?}"),
        Ok(_) => panic!("expected missing key, got a backend"),
    }
    set_key();
}
