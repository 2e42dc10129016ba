//! Blocking JSON-over-HTTP helper shared by the retrieval, policy and LLM
//! clients.

use std::io;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("connection to {url} refused")]
    ConnectionRefused { url: String },
    #[error("transport failure talking to {url}: {message}")]
    Other { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone)]
pub struct JsonHttp {
    agent: ureq::Agent,
    bearer: Option<String>,
}

impl JsonHttp {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent, bearer: None }
    }

    pub fn with_bearer(mut self, token: Option<String>) -> Self {
        self.bearer = token;
        self
    }

    pub fn post<T: Serialize + ?Sized>(&self, url: &str, body: &T) -> Result<HttpResponse, TransportError> {
        let payload = serde_json::to_vec(body).map_err(|e| TransportError::Other {
            url: url.to_string(),
            message: format!("cannot encode request: {e}"),
        })?;
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        let resp = req.send(&payload[..]).map_err(|e| classify(url, e))?;
        read(url, resp)
    }

    pub fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let resp = self.agent.get(url).call().map_err(|e| classify(url, e))?;
        read(url, resp)
    }
}

fn read(url: &str, mut resp: ureq::http::Response<ureq::Body>) -> Result<HttpResponse, TransportError> {
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().map_err(|e| classify(url, e))?;
    Ok(HttpResponse { status, body })
}

fn classify(url: &str, err: ureq::Error) -> TransportError {
    let url = url.to_string();
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout { url },
        ureq::Error::ConnectionFailed => TransportError::ConnectionRefused { url },
        ureq::Error::Io(e) if e.kind() == io::ErrorKind::ConnectionRefused => TransportError::ConnectionRefused { url },
        ureq::Error::Io(e) if e.kind() == io::ErrorKind::TimedOut => TransportError::Timeout { url },
        other => TransportError::Other { url, message: other.to_string() },
    }
}
