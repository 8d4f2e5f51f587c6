//! OpenAI-compatible chat-completions backend with bounded concurrency and
//! exponential-backoff retries.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmRequest, LlmResponse};
use crate::error::BackendError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Key material
    /// never appears in config files.
    pub api_key_env: String,
    /// Defaults to 0 for reproducibility.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
}

fn default_max_inflight() -> usize {
    4
}

fn default_retry_limit() -> u32 {
    3
}

/// Counting semaphore; `std` has none and this needs ~20 lines.
struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(slots: usize) -> Self {
        Gate { slots: Mutex::new(slots.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().unwrap() += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, crate::Error> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            crate::Error::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| crate::Error::Config(e.to_string()))?;
        let gate = Gate::new(config.max_inflight);
        Ok(HttpBackend { config, api_key, client, gate })
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, AttemptError> {
        let body = ChatRequest {
            model: &self.config.model_name,
            messages: vec![ChatMessage { role: "user", content: request.full_text() }],
            temperature: self.config.temperature,
            max_tokens: request.budget,
        };
        let response = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(status.as_u16()));
        }
        if !status.is_success() {
            return Err(AttemptError::Transport(format!("status {status}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| AttemptError::Transport(format!("bad response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(content)
    }
}

enum AttemptError {
    Transport(String),
    Retryable(u16),
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        let _slot = self.gate.acquire();
        let started = Instant::now();
        let mut backoff = Duration::from_millis(250);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(raw) => {
                    if raw.trim().is_empty() {
                        return Err(BackendError::EmptyResponse);
                    }
                    return Ok(LlmResponse {
                        raw,
                        backend_id: self.id().to_string(),
                        latency: started.elapsed(),
                    });
                }
                Err(AttemptError::Retryable(status)) => {
                    if attempts > self.config.retry_limit {
                        return if status == 429 {
                            Err(BackendError::RateLimited(attempts))
                        } else {
                            Err(BackendError::Transport(format!(
                                "status {status} after {attempts} attempts"
                            )))
                        };
                    }
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(AttemptError::Transport(message)) => {
                    return Err(BackendError::Transport(message));
                }
            }
        }
    }

    fn id(&self) -> &str {
        &self.config.model_name
    }
}
