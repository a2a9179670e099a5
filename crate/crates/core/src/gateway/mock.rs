//! Deterministic scripted provider for offline runs and tests.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{AttemptError, CompletionRequest, CompletionResult, FinishReason, GatewayError, Provider, Role, Usage};
use crate::tokenize::{Tokenizer, WordPunctTokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint: String,
    pub response: String,
}

/// Fingerprint → response table. Each fingerprint may appear once.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    entries: HashMap<String, String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, GatewayError> {
        let mut script = MockScript::new();
        for e in entries {
            script.insert_fingerprint(e.fingerprint, e.response)?;
        }
        Ok(script)
    }

    /// Reads a JSON array of `{fingerprint, response}` objects.
    pub fn from_json_file(path: &Path) -> Result<Self, GatewayError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(&text).map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        Self::from_entries(entries)
    }

    pub fn insert_fingerprint(
        &mut self,
        fingerprint: impl Into<String>,
        response: impl Into<String>,
    ) -> Result<(), GatewayError> {
        let fingerprint = fingerprint.into();
        if self.entries.contains_key(&fingerprint) {
            return Err(GatewayError::Script(format!("fingerprint collision: {fingerprint}")));
        }
        self.entries.insert(fingerprint, response.into());
        Ok(())
    }

    pub fn insert(&mut self, request: &CompletionRequest, response: impl Into<String>) -> Result<(), GatewayError> {
        self.insert_fingerprint(request.fingerprint(), response)
    }

    pub fn to_entries(&self) -> Vec<ScriptEntry> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .map(|(f, r)| ScriptEntry {
                fingerprint: f.clone(),
                response: r.clone(),
            })
            .collect();
        v.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        v
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn get(&self, fingerprint: &str) -> Option<&str> {
        self.entries.get(fingerprint).map(String::as_str)
    }
}

type Responder = Arc<dyn Fn(&CompletionRequest) -> String + Send + Sync>;
type FailurePredicate = Arc<dyn Fn(&CompletionRequest) -> bool + Send + Sync>;

/// What an unscripted request receives. Every variant must be a pure
/// function of the request.
#[derive(Clone)]
pub enum Fallback {
    /// `"[mock <12 hex digits>] <n>"` where both parts derive from the
    /// fingerprint and `n` is in 1..=5, so questionnaire answers still parse.
    Digest,
    /// The content of the last user message.
    EchoLastUser,
    /// Empty text.
    Empty,
    /// A transport error.
    Fail,
    Custom(Responder),
}

impl fmt::Debug for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fallback::Digest => f.write_str("Digest"),
            Fallback::EchoLastUser => f.write_str("EchoLastUser"),
            Fallback::Empty => f.write_str("Empty"),
            Fallback::Fail => f.write_str("Fail"),
            Fallback::Custom(_) => f.write_str("Custom"),
        }
    }
}

pub fn digest_response(fingerprint: &str) -> String {
    let likert = 1 + u8::from_str_radix(&fingerprint[..2], 16).unwrap_or(0) % 5;
    format!("[mock {}] {likert}", &fingerprint[..12])
}

pub struct MockProvider {
    model: String,
    script: MockScript,
    fallback: Fallback,
    failures: Vec<FailurePredicate>,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockProvider")
            .field("model", &self.model)
            .field("script_entries", &self.script.len())
            .field("fallback", &self.fallback)
            .finish()
    }
}

impl MockProvider {
    pub fn new(script: MockScript, fallback: Fallback) -> Self {
        MockProvider {
            model: "mock".to_string(),
            script,
            fallback,
            failures: Vec::new(),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Requests matching `predicate` fail with a transport error.
    pub fn fail_when(mut self, predicate: impl Fn(&CompletionRequest) -> bool + Send + Sync + 'static) -> Self {
        self.failures.push(Arc::new(predicate));
        self
    }

    /// Every attempt received so far, in arrival order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().len()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().clear();
    }

    /// The response a request receives, without recording a call.
    pub fn respond_to(&self, request: &CompletionRequest) -> Result<String, AttemptError> {
        if self.failures.iter().any(|p| p(request)) {
            return Err(AttemptError::Transport("injected mock failure".into()));
        }
        let fingerprint = request.fingerprint();
        if let Some(text) = self.script.get(&fingerprint) {
            return Ok(text.to_string());
        }
        match &self.fallback {
            Fallback::Digest => Ok(digest_response(&fingerprint)),
            Fallback::EchoLastUser => Ok(request
                .messages
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .map(|m| m.content.clone())
                .unwrap_or_default()),
            Fallback::Empty => Ok(String::new()),
            Fallback::Fail => Err(AttemptError::Transport(format!(
                "no scripted response for {fingerprint}"
            ))),
            Fallback::Custom(f) => Ok(f(request)),
        }
    }
}

impl Provider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResult, AttemptError> {
        self.calls.lock().push(request.clone());
        let text = self.respond_to(request)?;
        let tok = WordPunctTokenizer;
        let prompt_tokens = tok.count(&request.system_prompt)
            + request.messages.iter().map(|m| tok.count(&m.content)).sum::<usize>()
            + request.attachment.as_deref().map_or(0, |a| tok.count(a));
        Ok(CompletionResult {
            usage: Usage {
                prompt_tokens: prompt_tokens as u32,
                completion_tokens: tok.count(&text) as u32,
            },
            text,
            finish_reason: FinishReason::Complete,
            latency: Duration::ZERO,
        })
    }
}
