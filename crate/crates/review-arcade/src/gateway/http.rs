//! OpenAI-compatible chat-completions transport over HTTP.
//!
//! POSTs to `{endpoint}/chat/completions` and reads the first choice's
//! message content. API keys come from the environment only:
//! `REVIEW_ARCADE_API_KEY`, overridable per backend via
//! `REVIEW_ARCADE_API_KEY_<NAME>`.

use serde::Deserialize;
use serde_json::json;

use super::{AttemptError, BackendConfig, CompletionRequest, GatewayError, TokenUsage, Transport};

pub const API_KEY_ENV: &str = "REVIEW_ARCADE_API_KEY";

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    model_name: String,
    temperature: f64,
    max_output_tokens: u32,
    api_key: String,
}

fn env_key_name(backend_name: &str) -> String {
    let suffix: String = backend_name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{API_KEY_ENV}_{suffix}")
}

impl HttpTransport {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            GatewayError::InvalidConfig(format!("http backend '{}' has no endpoint", config.name))
        })?;
        let per_backend = env_key_name(&config.name);
        let api_key = std::env::var(&per_backend)
            .or_else(|_| std::env::var(API_KEY_ENV))
            .map_err(|_| GatewayError::MissingApiKey(format!("{API_KEY_ENV} or {per_backend}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(HttpTransport {
            client,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl Transport for HttpTransport {
    fn call(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), AttemptError> {
        let body = json!({
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.params.temperature.unwrap_or(self.temperature),
            "max_tokens": req.params.max_output_tokens.unwrap_or(self.max_output_tokens),
        });
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(AttemptError::TimedOut),
            Err(e) => return Err(AttemptError::Transient(e.to_string())),
        };
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            let message = response.text().unwrap_or_default();
            return Err(AttemptError::Fatal {
                status: status.as_u16(),
                message,
            });
        }
        let parsed: ChatResponse = match response.json() {
            Ok(p) => p,
            Err(e) => return Err(AttemptError::Transient(format!("bad response body: {e}"))),
        };
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .unwrap_or_default();
        let usage = parsed.usage.unwrap_or_default();
        Ok((
            text,
            TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        ))
    }
}
