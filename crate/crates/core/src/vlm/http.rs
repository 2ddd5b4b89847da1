//! OpenAI-compatible chat-completions backend.

use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{RateLimiter, VlmBackend, VlmError, VlmQuery};
use crate::grid::PAYLOAD_JPEG_QUALITY;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_API_KEY_ENV: &str = "VLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token. Keys never live in config.
    pub api_key_env: String,
    pub temperature: f64,
    pub image_detail: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub requests_per_second: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            temperature: 0.0,
            image_detail: "high".to_string(),
            timeout_s: 120.0,
            max_retries: 5,
            backoff_base_ms: 1000,
            requests_per_second: 2.0,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: Client,
    limiter: RateLimiter,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpConfig) -> Result<Self, VlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                VlmError::Config(format!("environment variable {} is not set", config.api_key_env))
            })?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: HttpConfig, api_key: impl Into<String>) -> Result<Self, VlmError> {
        if !(config.timeout_s > 0.0) {
            return Err(VlmError::Config("timeout_s must be > 0".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| VlmError::Config(e.to_string()))?;
        Ok(Self {
            limiter: RateLimiter::new(config.requests_per_second),
            config,
            api_key: api_key.into(),
            client,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn request_body(&self, query: &VlmQuery<'_>) -> Result<Value, VlmError> {
        let jpeg = query
            .grid
            .to_jpeg(PAYLOAD_JPEG_QUALITY)
            .map_err(|e| VlmError::Config(format!("cannot encode grid: {e}")))?;
        Ok(json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": query.prompt },
                    {
                        "type": "image_url",
                        "image_url": {
                            "url": format!("data:image/jpeg;base64,{}", BASE64.encode(jpeg)),
                            "detail": self.config.image_detail,
                        }
                    }
                ]
            }]
        }))
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = Duration::from_millis(self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16)));
        retry_after.map_or(exp, |ra| ra.max(exp))
    }
}

fn retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// Pulls the assistant text out of a chat-completions response.
fn reply_text(body: &Value) -> Option<String> {
    let content = &body["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl VlmBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn query_raw(&self, query: &VlmQuery<'_>) -> Result<String, VlmError> {
        let body = self.request_body(query)?;
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            let sent = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();

            let (err, retry_after) = match sent {
                Ok(resp) if resp.status().is_success() => {
                    let json: Value = resp.json().map_err(|e| VlmError::Transport(e.to_string()))?;
                    return reply_text(&json)
                        .ok_or_else(|| VlmError::Parse(format!("response has no message content: {json}")));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .map(Duration::from_secs_f64);
                    let err = VlmError::Status {
                        status: status.as_u16(),
                        body: resp.text().unwrap_or_default(),
                    };
                    if !retryable(status) {
                        return Err(err);
                    }
                    (err, retry_after)
                }
                Err(e) => (VlmError::Transport(e.to_string()), None),
            };

            if attempt >= self.config.max_retries {
                return Err(err);
            }
            let wait = self.backoff(attempt, retry_after);
            log::warn!("VLM request failed ({err}); retry {} in {:?}", attempt + 1, wait);
            thread::sleep(wait);
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_text_shapes() {
        let s = json!({"choices": [{"message": {"content": "hi {\"points\": [2]}"}}]});
        assert_eq!(reply_text(&s).unwrap(), "hi {\"points\": [2]}");
        let parts = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(reply_text(&parts).unwrap(), "ab");
        assert!(reply_text(&json!({"error": "x"})).is_none());
    }

    #[test]
    fn backoff_grows_and_honours_retry_after() {
        let cfg = HttpConfig { backoff_base_ms: 10, ..HttpConfig::default() };
        let b = HttpBackend::with_key(cfg, "k").unwrap();
        assert_eq!(b.backoff(0, None), Duration::from_millis(10));
        assert_eq!(b.backoff(3, None), Duration::from_millis(80));
        assert_eq!(b.backoff(0, Some(Duration::from_secs(2))), Duration::from_secs(2));
    }

    #[test]
    fn retryable_statuses() {
        assert!(retryable(StatusCode::TOO_MANY_REQUESTS));
        assert!(retryable(StatusCode::BAD_GATEWAY));
        assert!(!retryable(StatusCode::UNAUTHORIZED));
        assert!(!retryable(StatusCode::BAD_REQUEST));
    }

    #[test]
    fn missing_key_is_config_error() {
        let cfg = HttpConfig {
            api_key_env: "TPIVOT_TEST_SURELY_UNSET_KEY".into(),
            ..HttpConfig::default()
        };
        assert!(matches!(HttpBackend::from_env(cfg), Err(VlmError::Config(_))));
    }
}
