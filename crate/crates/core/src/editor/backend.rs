//! Text-completion backends used by the editor.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EditTrace;

/// Environment variable holding the bearer token for [`HttpModelBackend`].
pub const TOKEN_ENV: &str = "POSECODEC_LLM_TOKEN";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("scripted backend exhausted; unexpected prompt starting {0:?}")]
    Exhausted(String),
    #[error("fixture {index} expects the prompt to contain {expected:?}")]
    FixtureMismatch { index: usize, expected: String },
    #[error("{0} scripted fixture(s) were never consumed")]
    Unconsumed(usize),
    #[error("fixture file: {0}")]
    Fixtures(String),
    #[error("request timed out")]
    Timeout,
    #[error("http backend: {0}")]
    Http(String),
}

pub trait EditorBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// One scripted exchange: the prompt must contain `expect`; `response` is returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub expect: String,
    pub response: String,
}

/// Replays fixtures in order and refuses to improvise.
#[derive(Debug)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Fixture>>,
    served: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        Self { queue: Mutex::new(fixtures.into()), served: Mutex::new(0) }
    }

    /// Shorthand for fixtures that accept any prompt.
    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().map(|r| Fixture { expect: String::new(), response: r.into() }).collect())
    }

    /// A JSON array of `{"expect": ..., "response": ...}` records.
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let fixtures: Vec<Fixture> = serde_json::from_str(text).map_err(|e| BackendError::Fixtures(e.to_string()))?;
        Ok(Self::new(fixtures))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Fixtures(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fixtures that demand each recorded prompt verbatim and return its response.
    pub fn from_trace(trace: &EditTrace) -> Self {
        Self::new(
            trace
                .entries
                .iter()
                .filter_map(|e| e.response.as_ref().map(|r| Fixture { expect: e.prompt.clone(), response: r.clone() }))
                .collect(),
        )
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("fixture lock").len()
    }

    /// Error if any fixture is left over.
    pub fn finish(&self) -> Result<(), BackendError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(BackendError::Unconsumed(n)),
        }
    }
}

impl EditorBackend for ScriptedBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut q = self.queue.lock().expect("fixture lock");
        let mut served = self.served.lock().expect("fixture lock");
        let Some(f) = q.front() else {
            return Err(BackendError::Exhausted(prompt.chars().take(60).collect()));
        };
        if !prompt.contains(&f.expect) {
            return Err(BackendError::FixtureMismatch { index: *served, expected: f.expect.clone() });
        }
        let f = q.pop_front().expect("front checked");
        *served += 1;
        Ok(f.response)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Single-turn completion over HTTP(S): POST `{model, prompt, max_tokens}`,
/// read `{text}`. A timed-out request is retried up to `retries` times.
#[derive(Debug)]
pub struct HttpModelBackend {
    pub endpoint: String,
    pub model: String,
    pub max_tokens: u32,
    pub retries: usize,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpModelBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into(), model: model.into(), max_tokens: 1024, retries: 1, token, agent }
    }

    /// Token taken from [`TOKEN_ENV`] when set.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self::new(endpoint, model, timeout, std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()))
    }

    fn attempt(&self, prompt: &str) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = CompletionRequest { model: &self.model, prompt, max_tokens: self.max_tokens };
        let mut resp = req.send_json(&body).map_err(map_ureq)?;
        let parsed: CompletionResponse = resp.body_mut().read_json().map_err(map_ureq)?;
        Ok(parsed.text)
    }
}

fn map_ureq(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Http(other.to_string()),
    }
}

impl EditorBackend for HttpModelBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut tries = 0;
        loop {
            match self.attempt(prompt) {
                Err(BackendError::Timeout) if tries < self.retries => {
                    tries += 1;
                    log::warn!("completion request timed out, retrying ({tries}/{})", self.retries);
                }
                other => return other,
            }
        }
    }
}
