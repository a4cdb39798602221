//! OpenAI-compatible HTTP transport.
//!
//! Sends `POST {base_url}/chat/completions` with a JSON body of
//! `{model, messages, temperature, top_p, max_tokens}`. The credential is
//! passed as a bearer token when present.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    ChatMessage, ChatRequest, ChatResponse, FinishReason, TokenUsage, Transport, TransportError,
};

/// Name of the environment variable holding the API credential.
pub const API_KEY_ENV: &str = "SKILL_LOOM_API_KEY";

pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
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

impl HttpTransport {
    /// `base_url` is the API root, e.g. `https://host/v1`; the
    /// `/chat/completions` suffix is appended here.
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Construct with the credential read from [`API_KEY_ENV`].
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok(), timeout)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let body = WireRequest {
            model: &req.model,
            messages: &req.messages,
            temperature: req.temperature,
            top_p: req.top_p,
            max_tokens: req.max_tokens,
        };
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match call.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let retryable = code == 429 || code == 408 || code >= 500;
                let err = TransportError {
                    message: format!(
                        "status {code}: {}",
                        detail.chars().take(300).collect::<String>()
                    ),
                    retryable,
                };
                return Err(err);
            }
            Err(e) => return Err(TransportError::retryable(format!("transport: {e}"))),
        };
        let wire: WireResponse = response
            .into_json()
            .map_err(|e| TransportError::fatal(format!("response schema violation: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::fatal("response schema violation: no choices"))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        let content = match choice.message.content {
            Some(c) => c,
            None if finish_reason == FinishReason::Error => String::new(),
            None => {
                return Err(TransportError::fatal(
                    "response schema violation: missing content",
                ))
            }
        };
        let usage = wire
            .usage
            .map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(ChatResponse {
            content,
            finish_reason,
            usage,
        })
    }
}
