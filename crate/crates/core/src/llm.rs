//! Blocking client for OpenAI-style chat-completion endpoints.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const DEFAULT_TOKEN_ENV: &str = "CONRETRIEVE_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            temperature: 0.0,
            max_tokens: 80,
            timeout_secs: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::Config("remote backend requires an endpoint".into()));
        }
        if self.token_env.trim().is_empty() {
            return Err(Error::Config(
                "remote backend requires an auth token environment variable name".into(),
            ));
        }
        Ok(())
    }

    /// The JSON body sent for a single-message completion.
    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

/// Extracts the first choice's text from a completion response.
pub fn first_choice_text(response: &Value) -> Option<&str> {
    let choice = response.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .or_else(|| choice.get("text").and_then(Value::as_str))
}

#[cfg(feature = "remote")]
pub struct ChatClient {
    config: ChatConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "remote")]
impl ChatClient {
    pub fn new(config: ChatConfig) -> Result<Self> {
        config.validate()?;
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending requests without auth", config.token_env);
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            token,
            agent,
        })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    /// Sends `prompt` and returns the trimmed first completion. One attempt;
    /// callers wrap this in a [`crate::retry::RetryPolicy`].
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let mut request = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(self.config.request_body(prompt))
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(Error::BackendUnavailable(format!("HTTP status {status}")));
        }
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::BackendUnavailable(format!("unreadable response: {e}")))?;
        let text = first_choice_text(&body)
            .ok_or_else(|| Error::BackendUnavailable("response has no first choice text".into()))?
            .trim()
            .to_string();
        if text.is_empty() {
            return Err(Error::EmptyCompletion);
        }
        Ok(text)
    }
}
