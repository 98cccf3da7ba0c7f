use std::time::Duration;

use log::warn;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, ChatBackend, CompletionRequest, LlmError};

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

enum AttemptError {
    /// Transport failure or 5xx: worth retrying.
    Transient(String),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build()
            .map_err(|e| LlmError::BackendUnavailable {
                attempts: 0,
                last_error: e.to_string(),
            })?;
        Ok(Self { config, client })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// One unauthenticated GET against the base URL. Any HTTP answer, even
    /// an error status, means the endpoint is reachable.
    pub fn probe(&self) -> Result<u16, LlmError> {
        self.client
            .get(&self.config.base_url)
            .send()
            .map(|resp| resp.status().as_u16())
            .map_err(|e| LlmError::BackendUnavailable {
                attempts: 1,
                last_error: e.to_string(),
            })
    }

    fn attempt(&self, api_key: &str, body: &serde_json::Value) -> Result<String, AttemptError> {
        let resp = self
            .client
            .post(self.endpoint())
            .bearer_auth(api_key)
            .json(body)
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AttemptError::Fatal(LlmError::BackendUnavailable {
                attempts: 1,
                last_error: format!("HTTP {status}: {text}"),
            }));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| AttemptError::Transient(format!("unreadable response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::Fatal(LlmError::MalformedJson("response has no choices[0].message.content".into())))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let api_key = self.config.api_key()?;
        let body = json!({
            "model": request.model_id,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        let attempts = self.config.max_retries + 1;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&api_key, &body) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(e)) => {
                    warn!("chat completion attempt {attempt}/{attempts} failed: {e}");
                    last_error = e;
                }
            }
            if attempt < attempts {
                std::thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(LlmError::BackendUnavailable { attempts, last_error })
    }
}
