//! Deterministic scripted mock transport.
//!
//! A script is an ordered list of entries; each request is answered by the
//! first live entry whose matchers all hold. Entries marked `once` are
//! consumed when they fire. Unmatched requests hit the fallback text, or fail.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AttemptError, CompletionRequest, TokenUsage, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailKind {
    /// Retryable failure (network-style).
    Transient,
    /// Non-retryable request failure (reported as status 400).
    Fatal,
    /// Attempt times out.
    Timeout,
}

/// One scripted behavior. All matcher fields must hold for the entry to fire;
/// a field left empty always matches.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockEntry {
    /// Substring matched against system and user text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_substring: Option<String>,
    /// Substring matched against the request tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_tag: Option<String>,
    /// Consume this entry after it fires once.
    #[serde(default)]
    pub once: bool,
    /// Artificial service delay, for concurrency tests.
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailKind>,
}

impl MockEntry {
    fn matches(&self, req: &CompletionRequest) -> bool {
        if let Some(s) = &self.match_substring {
            if !req.system_text.contains(s.as_str()) && !req.user_text.contains(s.as_str()) {
                return false;
            }
        }
        if let Some(t) = &self.match_tag {
            if !req.tag.contains(t.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
    /// Answer for requests no entry matches; `None` makes them errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl MockScript {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        MockScript {
            entries,
            fallback: None,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// A served (request, response) pair, recorded in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub tag: String,
    pub system_text: String,
    pub user_text: String,
    pub response: String,
}

pub struct MockTransport {
    script: Mutex<ScriptState>,
    transcript: Mutex<Vec<TranscriptEntry>>,
    in_flight: AtomicUsize,
    max_in_flight_observed: AtomicUsize,
    calls: AtomicUsize,
}

struct ScriptState {
    script: MockScript,
    used: Vec<bool>,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        let used = vec![false; script.entries.len()];
        MockTransport {
            script: Mutex::new(ScriptState { script, used }),
            transcript: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight_observed: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().unwrap().clone()
    }

    pub fn calls_served(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneous calls this mock has seen.
    pub fn max_concurrent_observed(&self) -> usize {
        self.max_in_flight_observed.load(Ordering::SeqCst)
    }

    fn select(&self, req: &CompletionRequest) -> Option<MockEntry> {
        let mut state = self.script.lock().unwrap();
        for i in 0..state.script.entries.len() {
            if state.used[i] {
                continue;
            }
            if state.script.entries[i].matches(req) {
                if state.script.entries[i].once {
                    state.used[i] = true;
                }
                return Some(state.script.entries[i].clone());
            }
        }
        state.script.fallback.as_ref().map(|text| MockEntry {
            text: Some(text.clone()),
            ..Default::default()
        })
    }

    fn record(&self, req: &CompletionRequest, response: String) {
        self.transcript.lock().unwrap().push(TranscriptEntry {
            tag: req.tag.clone(),
            system_text: req.system_text.clone(),
            user_text: req.user_text.clone(),
            response,
        });
    }
}

fn approx_usage(req: &CompletionRequest, text: &str) -> TokenUsage {
    TokenUsage {
        prompt_tokens: (req.system_text.split_whitespace().count()
            + req.user_text.split_whitespace().count()) as u32,
        completion_tokens: text.split_whitespace().count() as u32,
    }
}

impl Transport for MockTransport {
    fn call(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), AttemptError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight_observed
            .fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);

        let entry = self.select(req);
        if let Some(e) = &entry {
            if e.delay_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(e.delay_ms));
            }
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);

        let entry = match entry {
            Some(e) => e,
            None => {
                self.record(req, "<unmatched>".to_string());
                return Err(AttemptError::Unmatched);
            }
        };
        if let Some(kind) = entry.fail {
            self.record(req, format!("<fail:{kind:?}>"));
            return match kind {
                FailKind::Transient => Err(AttemptError::Transient("scripted failure".into())),
                FailKind::Timeout => Err(AttemptError::TimedOut),
                FailKind::Fatal => Err(AttemptError::Fatal {
                    status: 400,
                    message: "scripted fatal failure".into(),
                }),
            };
        }
        let text = entry.text.unwrap_or_default();
        self.record(req, text.clone());
        let usage = approx_usage(req, &text);
        Ok((text, usage))
    }
}
