use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::http::{JsonHttp, TransportError};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum LlmError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("LLM server rejected request ({status}): {message}")]
    Protocol { status: u16, message: String },
    #[error("cannot decode LLM response: {0}")]
    Decode(String),
    #[error("no fixture completion matches prompt starting {0:?}")]
    NoFixture(String),
    #[error("cannot load fixtures: {0}")]
    Fixture(String),
}

/// Prompt text in, completion text out.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<L: LlmClient + ?Sized> LlmClient for &L {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

impl<L: LlmClient + ?Sized> LlmClient for Box<L> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

/// One recorded completion. It matches a prompt that contains every string
/// in `contains`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRule {
    pub contains: Vec<String>,
    pub completion: String,
}

/// Plays back recorded completions; the first matching rule wins.
#[derive(Debug, Default)]
pub struct FixtureLlm {
    rules: Vec<FixtureRule>,
    calls: AtomicUsize,
}

impl FixtureLlm {
    pub fn new(rules: Vec<FixtureRule>) -> Self {
        Self { rules, calls: AtomicUsize::new(0) }
    }

    /// Rules from a JSONL file, one `{"contains": [..], "completion": ..}`
    /// per line.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: FixtureRule = serde_json::from_str(line)
                .map_err(|e| LlmError::Fixture(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for FixtureLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.rules
            .iter()
            .find(|r| r.contains.iter().all(|c| prompt.contains(c.as_str())))
            .map(|r| r.completion.clone())
            .ok_or_else(|| LlmError::NoFixture(prompt.chars().take(60).collect()))
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    url: String,
    model: String,
    temperature: f64,
    http: JsonHttp,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl HttpLlm {
    /// `endpoint` is the API base, e.g. `https://api.openai.com/v1`.
    pub fn new(endpoint: &str, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url =
            if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        Self { url, model: model.into(), temperature: 0.0, http: JsonHttp::new(timeout).with_bearer(api_key) }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.temperature,
        };
        let resp = self.http.post(&self.url, &body)?;
        if !resp.is_success() {
            return Err(LlmError::Protocol { status: resp.status, message: resp.body });
        }
        let decoded: ChatResponse = serde_json::from_str(&resp.body).map_err(|e| LlmError::Decode(e.to_string()))?;
        decoded
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| LlmError::Decode("response has no choices".into()))
    }
}
