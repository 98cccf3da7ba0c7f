//! Chat-completion gateway.
//!
//! Every LLM-touching pipeline node goes through [`Gateway::complete`]. The
//! backend behind it is chosen by [`BackendMode`]: a live OpenAI-compatible
//! HTTP endpoint, a scripted [`MockPlaybook`], or a cassette that is either
//! being recorded from a live backend or replayed offline.

mod cassette;
mod extract;
mod http;
mod mock;
mod template;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{cassette_key, CassetteEntry, RecordingBackend, ReplayBackend};
pub use extract::{extract_code, extract_json};
pub use http::HttpBackend;
pub use mock::{MockBackend, MockPlaybook, PlaybookEntry};
pub use template::{render_template, template_names, Template};

pub const DEFAULT_MODEL: &str = "glm-4-flash";
pub const DEFAULT_BASE_URL: &str = "https://open.bigmodel.cn/api/paas/v4";
pub const DEFAULT_API_KEY_ENV: &str = "REPAIRGRAPH_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("no scripted response matches the request: {0}")]
    MockMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} has unbound placeholder {{{placeholder}}}")]
    UnboundPlaceholder { template: String, placeholder: String },
    #[error("response contains no code")]
    EmptyCode,
    #[error("response contains no JSON object")]
    NoJsonFound,
    #[error("malformed JSON in response: {0}")]
    MalformedJson(String),
    #[error("cassette i/o: {0}")]
    Cassette(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A single chat-completion call. `template` names the prompt template the
/// request was rendered from; it keys cassettes and is never sent on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template: String,
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// One user message at temperature 0.
    pub fn from_prompt(template: &str, model_id: &str, prompt: impl Into<String>) -> Self {
        Self {
            template: template.to_string(),
            model_id: model_id.to_string(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: 2048,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let Some(last) = self.messages.last() else {
            return Err(LlmError::InvalidRequest("no messages".into()));
        };
        if last.role != Role::User {
            return Err(LlmError::InvalidRequest("last message must come from the user".into()));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(LlmError::InvalidRequest(format!("empty {:?} message", m.role)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Concatenated message contents, which is what playbook matchers see.
    pub fn rendered_prompt(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    #[default]
    Mock,
    Record,
    Replay,
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "mock" => Ok(Self::Mock),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(format!("unknown backend mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
    pub mode: BackendMode,
    pub cassette: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            model_id: DEFAULT_MODEL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_s: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            mode: BackendMode::Mock,
            cassette: None,
        }
    }
}

impl BackendConfig {
    pub fn api_key(&self) -> Result<String, LlmError> {
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(LlmError::AuthMissing(self.api_key_env.clone())),
        }
    }
}

/// Anything that can answer a completion request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Shared entry point for all pipeline LLM calls.
#[derive(Clone)]
pub struct Gateway {
    model_id: String,
    backend: Arc<dyn ChatBackend>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("model_id", &self.model_id).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            model_id: model_id.into(),
            backend,
        }
    }

    pub fn mock(playbook: MockPlaybook) -> Self {
        Self::new(DEFAULT_MODEL, Arc::new(MockBackend::new(playbook)))
    }

    /// Build the backend a config asks for. Mock mode needs a playbook, so it
    /// is constructed through [`Gateway::mock`] instead.
    pub fn from_config(config: &BackendConfig) -> Result<Self, LlmError> {
        let backend: Arc<dyn ChatBackend> = match config.mode {
            BackendMode::Live => Arc::new(HttpBackend::new(config.clone())?),
            BackendMode::Record => {
                let path = config
                    .cassette
                    .clone()
                    .ok_or_else(|| LlmError::Cassette("record mode needs a cassette path".into()))?;
                Arc::new(RecordingBackend::new(HttpBackend::new(config.clone())?, path)?)
            }
            BackendMode::Replay => {
                let path = config
                    .cassette
                    .as_ref()
                    .ok_or_else(|| LlmError::Cassette("replay mode needs a cassette path".into()))?;
                Arc::new(ReplayBackend::load(path)?)
            }
            BackendMode::Mock => {
                return Err(LlmError::InvalidRequest(
                    "mock mode is built from a playbook, not a config".into(),
                ))
            }
        };
        Ok(Self::new(config.model_id.clone(), backend))
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        self.backend.complete(request)
    }

    /// Render `template` with `vars` and send it as a single user message.
    pub fn complete_template(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, LlmError> {
        let prompt = render_template(template, vars)?;
        let request = CompletionRequest::from_prompt(template, &self.model_id, prompt);
        self.complete(&request)
    }
}
