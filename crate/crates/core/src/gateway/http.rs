//! Blocking client for OpenAI-compatible `/chat/completions` endpoints.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Completion, ModelBackend, ModelRequest};
use crate::error::{GatewayError, ProviderFailure};

/// Exponential backoff: attempt `k` (0-based) that fails transiently is
/// followed by a sleep of `base_delay * 2^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry_index: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry_index)
    }
}

/// Turn an image reference into something a chat-completions endpoint accepts:
/// URLs pass through, local files become base64 data URLs.
pub fn resolve_image(image_ref: &str, image_root: Option<&Path>) -> Result<String, ProviderFailure> {
    let trimmed = image_ref.trim();
    if ["http://", "https://", "data:"]
        .iter()
        .any(|scheme| trimmed.starts_with(scheme))
    {
        return Ok(trimmed.to_string());
    }
    let path = Path::new(trimmed);
    let path = match image_root {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    };
    let bytes = std::fs::read(&path).map_err(|_| ProviderFailure::ImageUnreadable(image_ref.to_string()))?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/png",
    };
    Ok(format!("data:{mime};base64,{}", BASE64.encode(bytes)))
}

#[derive(Debug, Clone, Default)]
pub struct HttpBackend {
    retry: RetryPolicy,
    image_root: Option<PathBuf>,
}

enum Attempt {
    Done(Completion),
    Fatal(GatewayError),
    Transient { timeout: bool, message: String },
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    fn request_body(&self, request: &ModelRequest<'_>) -> Result<Value, ProviderFailure> {
        let bundle = request.bundle;
        let user_content = match request.image_ref {
            Some(image) => {
                let url = resolve_image(image, self.image_root.as_deref())?;
                json!([
                    {"type": "text", "text": bundle.user_text},
                    {"type": "image_url", "image_url": {"url": url}},
                ])
            }
            None => Value::String(bundle.user_text.clone()),
        };
        let mut messages = Vec::new();
        if !bundle.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": bundle.system_text}));
        }
        messages.push(json!({"role": "user", "content": user_content}));
        let p = request.params;
        Ok(json!({
            "model": request.endpoint.model_name,
            "messages": messages,
            "temperature": p.temperature,
            "top_p": p.top_p,
            "top_k": p.top_k,
            "max_tokens": p.max_tokens,
            "repetition_penalty": p.repetition_penalty,
            "stream": false,
        }))
    }

    fn attempt(&self, agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Attempt {
        let started = Instant::now();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Transient {
                    timeout: true,
                    message: "request timed out".into(),
                }
            }
            Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_) | ureq::Error::Json(_))) => {
                return Attempt::Fatal(ProviderFailure::BadResponse(e.to_string()).into())
            }
            Err(e) => {
                return Attempt::Transient {
                    timeout: false,
                    message: e.to_string(),
                }
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Transient {
                    timeout: true,
                    message: "response body timed out".into(),
                }
            }
            Err(e) => {
                return Attempt::Transient {
                    timeout: false,
                    message: e.to_string(),
                }
            }
        };
        if status == 429 || status >= 500 {
            return Attempt::Transient {
                timeout: false,
                message: format!("HTTP {status}: {text}"),
            };
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(ProviderFailure::Status { status, body: text }.into());
        }
        match parse_completion(&text) {
            Ok(mut c) => {
                c.latency = started.elapsed().as_secs_f64();
                Attempt::Done(c)
            }
            Err(e) => Attempt::Fatal(e.into()),
        }
    }
}

fn parse_completion(body: &str) -> Result<Completion, ProviderFailure> {
    let value: Value = serde_json::from_str(body).map_err(|e| ProviderFailure::BadResponse(e.to_string()))?;
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| ProviderFailure::BadResponse("response has no choices[0].message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(ProviderFailure::BadResponse(format!("unexpected content {other}"))),
    };
    let usage: Option<Usage> = value
        .get("usage")
        .filter(|u| !u.is_null())
        .map(|u| serde_json::from_value(u.clone()))
        .transpose()
        .map_err(|e| ProviderFailure::BadResponse(format!("bad usage block: {e}")))?;
    Ok(Completion {
        text,
        prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
        completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        latency: 0.0,
        backoff_seconds: 0.0,
    })
}

impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &ModelRequest<'_>) -> Result<Completion, GatewayError> {
        let endpoint = request.endpoint;
        let api_key = if endpoint.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&endpoint.api_key_env)
                    .map_err(|_| ProviderFailure::MissingCredential(endpoint.api_key_env.clone()))?,
            )
        };
        let body = self.request_body(request)?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let timeout = Duration::from_secs_f64(endpoint.timeout.max(0.001));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();

        let started = Instant::now();
        let mut backoff = Duration::ZERO;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = (false, String::new());
        for attempt in 0..attempts {
            match self.attempt(&agent, &url, api_key.as_deref(), &body) {
                Attempt::Done(mut completion) => {
                    completion.latency = started.elapsed().as_secs_f64();
                    completion.backoff_seconds = backoff.as_secs_f64();
                    return Ok(completion);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient { timeout, message } => {
                    last = (timeout, message);
                    if attempt + 1 < attempts {
                        let delay = self.retry.delay(attempt);
                        std::thread::sleep(delay);
                        backoff += delay;
                    }
                }
            }
        }
        Err(match last {
            (true, _) => GatewayError::Timeout { attempts },
            (false, message) => GatewayError::Transport { attempts, message },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn url_images_pass_through() {
        assert_eq!(resolve_image("https://x/y.png", None).unwrap(), "https://x/y.png");
        assert!(matches!(
            resolve_image("no/such/file.png", None),
            Err(ProviderFailure::ImageUnreadable(_))
        ));
    }

    #[test]
    fn local_images_become_data_urls() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.jpg"), [1u8, 2, 3]).unwrap();
        let url = resolve_image("a.jpg", Some(dir.path())).unwrap();
        assert_eq!(url, "data:image/jpeg;base64,AQID");
    }

    #[test]
    fn parses_usage_and_content_parts() {
        let c = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}],"usage":{"prompt_tokens":5,"completion_tokens":37,"total_tokens":42}}"#,
        )
        .unwrap();
        assert_eq!(c.text, "hi");
        assert_eq!(c.completion_tokens, Some(37));
        let c = parse_completion(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]}"#)
            .unwrap();
        assert_eq!(c.text, "ab");
        assert_eq!(c.completion_tokens, None);
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
    }
}
