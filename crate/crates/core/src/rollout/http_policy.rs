use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{truncate_at_stop, FinishReason, Generation, GenerationRequest, PolicyClient, PolicyError};
use crate::http::JsonHttp;

/// Client for an OpenAI-compatible `/v1/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpPolicyClient {
    url: String,
    model: String,
    temperature: f64,
    http: JsonHttp,
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    stop: &'a [String],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    include_stop_str_in_output: bool,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    stop_reason: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    completion_tokens: usize,
}

impl HttpPolicyClient {
    /// `endpoint` is the API base (for example `http://host:8000/v1`); a
    /// full `/completions` URL is also accepted.
    pub fn new(endpoint: &str, model: impl Into<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/completions") { base.to_string() } else { format!("{base}/completions") };
        Self { url, model: model.into(), temperature: 1.0, http: JsonHttp::new(timeout) }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.http = self.http.with_bearer(token);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl PolicyClient for HttpPolicyClient {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            stop: &request.stop,
            temperature: self.temperature,
            seed: request.seed,
            include_stop_str_in_output: true,
        };
        let resp = self.http.post(&self.url, &body)?;
        if !resp.is_success() {
            return Err(PolicyError::Protocol { status: resp.status, message: resp.body });
        }
        let decoded: CompletionResponse =
            serde_json::from_str(&resp.body).map_err(|e| PolicyError::Decode(e.to_string()))?;
        let choice =
            decoded.choices.into_iter().next().ok_or_else(|| PolicyError::Decode("response has no choices".into()))?;
        Ok(postprocess(choice, decoded.usage, &request.stop))
    }
}

/// Servers differ in whether the matched stop string is echoed back; restore
/// it from `stop_reason` when it is missing.
fn postprocess(choice: Choice, usage: Option<Usage>, stops: &[String]) -> Generation {
    let (mut text, matched) = truncate_at_stop(&choice.text, stops);
    let tokens = usage.map_or_else(|| text.split_whitespace().count(), |u| u.completion_tokens);
    let finish = match (matched, choice.finish_reason.as_deref()) {
        (Some(stop), _) => FinishReason::Stop(stop),
        (None, Some("length")) => FinishReason::Length,
        (None, Some("stop")) => match choice.stop_reason.as_ref().and_then(|v| v.as_str()) {
            Some(s) if stops.iter().any(|x| x == s) => {
                text.push_str(s);
                FinishReason::Stop(s.to_string())
            }
            _ => FinishReason::EndOfText,
        },
        (None, _) => FinishReason::EndOfText,
    };
    Generation { text, tokens, finish }
}
