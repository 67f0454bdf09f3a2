use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmError, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Sleep before each retry: the backoff doubles every time.
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.max_retries)
            .map(|i| self.initial_backoff * 2u32.pow(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

/// Client for an OpenAI-style chat-completions endpoint.
pub struct RemoteBackend {
    config: RemoteConfig,
    retry: RetryPolicy,
    agent: ureq::Agent,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(ChatResponse),
    Retryable(String),
    Fatal(String),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteBackend::with_retry(config, RetryPolicy::default())
    }

    pub fn with_retry(config: RemoteConfig, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        RemoteBackend {
            config,
            retry,
            agent,
            api_key,
        }
    }

    pub fn wire_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match call.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retryable(e.to_string()),
        };
        let status = response.status().as_u16();
        if status >= 500 {
            return Attempt::Retryable(format!("HTTP {status}"));
        }
        if status >= 400 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(format!("HTTP {status}: {text}"));
        }
        let wire: WireResponse = match response.body_mut().read_json() {
            Ok(w) => w,
            Err(e) => return Attempt::Fatal(format!("malformed completion body: {e}")),
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal("completion has no choices".into());
        };
        let content = choice.message.content.unwrap_or_default();
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None if !content.is_empty() => FinishReason::Stop,
            _ if content.is_empty() => FinishReason::Error,
            _ => FinishReason::Stop,
        };
        let usage = wire.usage.map_or_else(Usage::default, |u| Usage {
            prompt_units: u.prompt_tokens,
            completion_units: u.completion_tokens,
        });
        Attempt::Done(ChatResponse {
            content,
            finish_reason,
            usage,
        })
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = self.wire_body(request);
        let mut delays = self.retry.delays().into_iter();
        loop {
            match self.attempt(&body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(msg) => return Err(LlmError::Backend(msg)),
                Attempt::Retryable(msg) => match delays.next() {
                    Some(delay) => {
                        warn!(endpoint = %self.config.endpoint, error = %msg, ?delay, "retrying chat completion");
                        std::thread::sleep(delay);
                    }
                    None => {
                        return Err(LlmError::Backend(format!(
                            "{} unreachable after {} retries: {msg}",
                            self.config.endpoint, self.retry.max_retries
                        )))
                    }
                },
            }
        }
    }
}
