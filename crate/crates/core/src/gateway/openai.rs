//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    AttemptError, CompletionRequest, CompletionResult, FinishReason, GatewayError, Provider, ProviderConfig, Usage,
};

pub struct OpenAiProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
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
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(OpenAiProvider { config, agent })
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    /// The JSON body sent upstream. The attachment travels as a leading user
    /// message wrapped in `<document>` tags.
    pub fn wire_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        if let Some(doc) = &request.attachment {
            messages.push(json!({
                "role": "user",
                "content": format!("<document>\n{doc}\n</document>"),
            }));
        }
        messages.extend(
            request
                .messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content})),
        );
        json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        })
    }
}

fn parse_response(body: &str) -> Result<CompletionResult, AttemptError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| AttemptError::Protocol(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| AttemptError::Protocol("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") => FinishReason::Complete,
        Some("length") => FinishReason::LengthCap,
        Some(_) => FinishReason::ProviderError,
    };
    let text = choice.message.content.unwrap_or_default();
    let usage = wire.usage.map_or(Usage::default(), |u| Usage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
    });
    Ok(CompletionResult {
        text,
        finish_reason,
        usage,
        latency: Duration::ZERO,
    })
}

impl Provider for OpenAiProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResult, AttemptError> {
        let body = self.wire_body(request).to_string();
        let mut call = self.agent.post(&self.url()).header("Content-Type", "application/json");
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| AttemptError::Rejected(format!("environment variable {var} is not set")))?;
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(body).map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        match status {
            200..=299 => parse_response(&text),
            429 => Err(AttemptError::RateLimited {
                message: format!("HTTP 429: {}", truncate(&text)),
                retry_after,
            }),
            408 | 500..=599 => Err(AttemptError::Transport(format!("HTTP {status}: {}", truncate(&text)))),
            _ => Err(AttemptError::Rejected(format!("HTTP {status}: {}", truncate(&text)))),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}
