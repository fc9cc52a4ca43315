//! Chat-completion transport. One POST per call, OpenAI-style body, bearer
//! auth from CALIB_API_KEY, exponential-backoff retries on 429/5xx/timeout.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{LlmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// `attempts` counts total tries; the i-th retry sleeps base_delay * 2^i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_parallel: usize,
    /// Defaults to the CALIB_API_KEY environment variable; sent as a bearer
    /// authorization header when present.
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
}

impl BackendConfig {
    /// Offline deterministic backend; never touches the network.
    pub fn mock() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model: "mock".into(),
            temperature: 0.1,
            timeout: Duration::from_secs(30),
            max_parallel: 4,
            api_key: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var("CALIB_API_KEY").ok(),
            ..Self::mock()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.kind == BackendKind::Http && self.endpoint.is_empty() {
            return Err(LlmError::Config("http backend needs an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// The request body exactly as sent over the wire.
pub fn build_chat_body(config: &BackendConfig, messages: &[ChatMessage]) -> Value {
    json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": messages,
    })
}

fn extract_content(value: &Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

/// POSTs the chat body and returns the first choice's message content.
/// Retries (with exponential backoff) only on 429, 5xx, and timeouts; other
/// failures surface immediately.
pub fn chat_complete(config: &BackendConfig, messages: &[ChatMessage]) -> Result<String> {
    if config.kind != BackendKind::Http {
        return Err(LlmError::Config(
            "chat_complete requires an http backend; the mock short-circuits at pipeline level".into(),
        ));
    }
    config.validate()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| LlmError::Config(e.to_string()))?;
    let body = build_chat_body(config, messages);

    let attempts = config.retry.attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut request = client.post(&config.endpoint).json(&body);
        if let Some(key) = &config.api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(response) => {
                let code = response.status().as_u16();
                if (200..300).contains(&code) {
                    let value: Value = response
                        .json()
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                    return extract_content(&value).ok_or_else(|| {
                        LlmError::MalformedResponse(format!(
                            "missing choices[0].message.content in {value}"
                        ))
                    });
                }
                let retryable = code == 429 || (500..600).contains(&code);
                if !retryable || attempt >= attempts {
                    return Err(LlmError::BadStatus(code));
                }
            }
            Err(e) => {
                if !e.is_timeout() || attempt >= attempts {
                    return Err(LlmError::Transport(e.to_string()));
                }
            }
        }
        std::thread::sleep(config.retry.base_delay * 2u32.pow(attempt - 1));
    }
}

/// Applies `f` to every item with at most `max_parallel` worker threads,
/// returning results in input order.
pub fn parallel_map<T, R, F>(items: Vec<T>, max_parallel: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let workers = max_parallel.max(1).min(n);
    if workers == 1 {
        return items.into_iter().map(f).collect();
    }
    let queue = Mutex::new(items.into_iter().enumerate());
    let done = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, item)) = next else { break };
                let result = f(item);
                done.lock().expect("result lock").push((i, result));
            });
        }
    });
    let mut results = done.into_inner().expect("results");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}
