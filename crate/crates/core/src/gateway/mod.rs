//! Uniform access to the reasoning, perception and judge endpoints.
//!
//! Every call goes through [`complete_text`] or [`complete_vision`], which
//! enforce the image-attachment contract of the prompt bundle before handing
//! a [`ModelRequest`] to a [`ModelBackend`]. Two backends exist: an
//! OpenAI-compatible HTTP client ([`HttpBackend`]) and a scripted in-process
//! mock ([`MockBackend`]).

mod http;
mod mock;

use serde::{Deserialize, Serialize};

pub use http::{resolve_image, HttpBackend, RetryPolicy};
pub use mock::{MockBackend, MockCall, MockScript, ScriptedReply, TaskScript};

use crate::audit::Role;
use crate::error::{GatewayError, ProviderFailure};
use crate::prompts::PromptBundle;
use crate::task::GenerationParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty means no
    /// authorization header is sent.
    pub api_key_env: String,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_context: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: String::new(),
            api_key_env: String::new(),
            timeout: 120.0,
            max_context: 8192,
        }
    }
}

/// Result of one model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// Wall time of the call in seconds, including retries.
    pub latency: f64,
    /// Portion of `latency` spent sleeping between retries.
    #[serde(default)]
    pub backoff_seconds: f64,
}

/// Who is calling, for script lookup and error annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext<'a> {
    pub task_id: &'a str,
    pub role: Role,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelRequest<'a> {
    pub endpoint: &'a EndpointConfig,
    pub bundle: &'a PromptBundle,
    pub params: &'a GenerationParams,
    pub image_ref: Option<&'a str>,
    pub ctx: CallContext<'a>,
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Execute one request. Preconditions have already been checked.
    fn send(&self, request: &ModelRequest<'_>) -> Result<Completion, GatewayError>;
}

pub fn complete_text(
    backend: &dyn ModelBackend,
    endpoint: &EndpointConfig,
    bundle: &PromptBundle,
    params: &GenerationParams,
    ctx: CallContext<'_>,
) -> Result<Completion, GatewayError> {
    if bundle.image_attached {
        return Err(ProviderFailure::Precondition("text completion with an image-bearing prompt".into()).into());
    }
    backend.send(&ModelRequest {
        endpoint,
        bundle,
        params,
        image_ref: None,
        ctx,
    })
}

pub fn complete_vision(
    backend: &dyn ModelBackend,
    endpoint: &EndpointConfig,
    bundle: &PromptBundle,
    params: &GenerationParams,
    image_ref: &str,
    ctx: CallContext<'_>,
) -> Result<Completion, GatewayError> {
    if !bundle.image_attached {
        return Err(ProviderFailure::Precondition("vision completion with a text-only prompt".into()).into());
    }
    if image_ref.trim().is_empty() {
        return Err(ProviderFailure::ImageUnreadable(image_ref.to_string()).into());
    }
    backend.send(&ModelRequest {
        endpoint,
        bundle,
        params,
        image_ref: Some(image_ref),
        ctx,
    })
}

/// Tokens attributed to a completion: the provider's count when reported,
/// otherwise `ceil(chars / 4)` of `fallback_text`.
pub fn count_tokens(completion: &Completion, fallback_text: &str) -> u64 {
    match completion.completion_tokens {
        Some(n) => n,
        None => estimate_tokens(fallback_text),
    }
}

pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
