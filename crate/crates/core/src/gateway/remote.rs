//! Client for endpoints speaking the chat-completions HTTP+JSON shape.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_turns, ChatBackend, ChatTurn, GatewayError, GenerationConfig};

pub const ENV_ENDPOINT: &str = "PANDORA_ENDPOINT";
pub const ENV_API_KEY: &str = "PANDORA_API_KEY";

/// Endpoint settings, usually read from a TOML file and then overridden by
/// `PANDORA_ENDPOINT` / `PANDORA_API_KEY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            endpoint: String::new(),
            api_key: None,
            max_in_flight: 4,
            timeout_secs: 120,
            backoff_base_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let parsed: EndpointConfig =
            toml::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Ok(parsed.with_env_overrides())
    }

    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_ENDPOINT) {
            if !url.trim().is_empty() {
                self.endpoint = url;
            }
        }
        if let Ok(key) = std::env::var(ENV_API_KEY) {
            if !key.trim().is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }
}

#[derive(Debug, Serialize)]
pub(crate) struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatTurn],
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl<'a> ChatRequest<'a> {
    pub fn new(config: &'a GenerationConfig, turns: &'a [ChatTurn]) -> Self {
        ChatRequest {
            model: &config.model_name,
            messages: turns,
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_output_tokens,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub(crate) fn extract_content(body: &str) -> Result<String, GatewayError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .unwrap_or_default();
    if content.trim().is_empty() {
        return Err(GatewayError::EmptyOutput);
    }
    Ok(content)
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(|m| m.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.trim().to_string())
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fail(GatewayError),
}

pub struct RemoteBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
    requests: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        if config.endpoint.trim().is_empty() {
            return Err(GatewayError::Config(format!(
                "no endpoint configured (set it in the config file or {ENV_ENDPOINT})"
            )));
        }
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
                .build(),
        );
        Ok(RemoteBackend {
            in_flight: InFlight::new(config.max_in_flight),
            config,
            agent,
            requests: AtomicU64::new(0),
        })
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    fn attempt(&self, request: &ChatRequest<'_>) -> Attempt {
        let _permit = self.in_flight.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut call = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match call.send_json(request) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(GatewayError::RetriesExhausted { attempts: 1, last: e.to_string() }),
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(GatewayError::RetriesExhausted { attempts: 1, last: e.to_string() }),
        };
        if (200..300).contains(&status) {
            return match extract_content(&body) {
                Ok(text) => Attempt::Done(text),
                Err(e) => Attempt::Fail(e),
            };
        }
        let err = GatewayError::Endpoint {
            status,
            message: error_message(&body),
        };
        if status == 429 || status >= 500 {
            Attempt::Retry(err)
        } else {
            Attempt::Fail(err)
        }
    }
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, config: &GenerationConfig, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        check_turns(turns)?;
        config.validate()?;
        let request = ChatRequest::new(config, turns);
        let attempts = config.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&request) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {}/{} against {} failed: {e}", attempt + 1, attempts, self.config.endpoint);
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            GatewayError::RetriesExhausted { last, .. } => GatewayError::RetriesExhausted { attempts, last },
            other => other,
        })
    }

    fn describe(&self) -> String {
        format!("remote:{}", self.config.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape_uses_wire_key_names() {
        let cfg = GenerationConfig {
            seed: Some(7),
            ..GenerationConfig::default()
        };
        let turns = [ChatTurn::user("hello")];
        let json = serde_json::to_value(ChatRequest::new(&cfg, &turns)).unwrap();
        assert_eq!(json["messages"][0]["role"], "user");
        assert_eq!(json["max_tokens"], 256);
        assert_eq!(json["top_p"], 0.9);
        assert_eq!(json["seed"], 7);
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"index":0,"message":{"role":"assistant","content":"misinformation"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "misinformation");
        let empty = r#"{"choices":[{"message":{"role":"assistant","content":"  "}}]}"#;
        assert!(matches!(extract_content(empty), Err(GatewayError::EmptyOutput)));
        assert!(matches!(extract_content("nope"), Err(GatewayError::Protocol(_))));
    }

    #[test]
    fn error_message_prefers_error_object() {
        assert_eq!(error_message(r#"{"error":{"message":"bad key"}}"#), "bad key");
        assert_eq!(error_message("plain text"), "plain text");
    }

    #[test]
    fn missing_endpoint_is_a_config_error() {
        assert!(matches!(
            RemoteBackend::new(EndpointConfig::default()),
            Err(GatewayError::Config(_))
        ));
    }
}
