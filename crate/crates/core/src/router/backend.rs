//! Chat backends: a chat-completions HTTP endpoint, and the offline resolver.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::call::render_calls;
use crate::prompt::PromptDocument;
use crate::resolver::ResolverContext;

/// Environment variable holding the API key for the remote backend.
pub const API_KEY_ENV: &str = "SCOPEVOICE_LLM_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend error: {0}")]
    Failed(String),
}

/// A chat model. `complete` receives the whole transcript, oldest first, as
/// (role, content) pairs and returns the assistant's reply text.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Checks the backend can be reached before a session starts.
    fn open(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError>;
}

/// Reply used when the resolver finds no rule; it carries no call, so the
/// router treats it as a failed turn.
pub const NO_MATCH_REPLY: &str = "I could not match this sentence to an executable method.";

/// Answers from the most recent system prompt using [`ResolverContext`].
#[derive(Debug, Default, Clone)]
pub struct DeterministicBackend;

impl ChatBackend for DeterministicBackend {
    fn name(&self) -> &str {
        "deterministic"
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError> {
        let prompt = messages
            .iter()
            .rev()
            .find(|(r, _)| *r == Role::System)
            .ok_or_else(|| BackendError::Failed("no system prompt in transcript".into()))?;
        let doc = PromptDocument::parse(prompt.1).map_err(|e| BackendError::Failed(format!("system prompt: {e}")))?;
        let query = messages
            .iter()
            .rev()
            .find(|(r, _)| *r == Role::User)
            .ok_or_else(|| BackendError::Failed("no user message in transcript".into()))?
            .1;
        let sentence = serde_json::from_str::<serde_json::Value>(query)
            .ok()
            .and_then(|v| v.get("sentence").and_then(|s| s.as_str()).map(str::to_string))
            .unwrap_or_else(|| query.to_string());
        Ok(match ResolverContext::from_document(&doc).resolve(&sentence) {
            Ok(calls) => render_calls(&calls).replace("; ", "\n"),
            Err(_) => NO_MATCH_REPLY.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl RemoteConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// A chat-completions style endpoint.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
}

impl RemoteBackend {
    /// Reads the API key from the environment, if set.
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            config,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn classify(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.config.timeout())
        } else if e.is_connect() {
            BackendError::Unavailable(e.to_string())
        } else {
            BackendError::Failed(e.to_string())
        }
    }
}

impl ChatBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    /// Opens a TCP connection to the endpoint's host within the timeout.
    fn open(&self) -> Result<(), BackendError> {
        let url = reqwest::Url::parse(&self.config.url)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.config.url)))?;
        let host = url
            .host_str()
            .ok_or_else(|| BackendError::Unavailable(format!("{}: no host", self.config.url)))?;
        let port = url.port_or_known_default().unwrap_or(80);
        let addrs: Vec<_> = (host, port)
            .to_socket_addrs()
            .map_err(|e| BackendError::Unavailable(format!("{host}: {e}")))?
            .collect();
        let mut last = format!("{host}: no address");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.config.timeout()) {
                Ok(_) => return Ok(()),
                Err(e) => last = format!("{addr}: {e}"),
            }
        }
        Err(BackendError::Unavailable(last))
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages
                .iter()
                .map(|(r, c)| json!({"role": r.as_str(), "content": c}))
                .collect::<Vec<_>>(),
            "temperature": self.config.temperature,
        });
        // built per call: a blocking client must not be dropped inside an async runtime
        let client = reqwest::blocking::Client::builder()
            .timeout(self.config.timeout())
            .build()
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        let mut req = client.post(&self.config.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| self.classify(e))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| self.classify(e))?;
        if !status.is_success() {
            return Err(BackendError::Failed(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Failed(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Failed("response has no choices[0].message.content".into()))
    }
}
