use std::time::Duration;

use super::{ErrorBody, Health, RetrievalError, RetrieveRequest, RetrieveResponse, Retriever};
use crate::http::JsonHttp;
use crate::protocol::RetrievedDoc;

/// Client for a `/retrieve` endpoint.
#[derive(Debug, Clone)]
pub struct HttpRetriever {
    base_url: String,
    http: JsonHttp,
    return_scores: bool,
}

impl HttpRetriever {
    /// `endpoint` is the service base URL; a trailing `/retrieve` is accepted.
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let base = base.strip_suffix("/retrieve").unwrap_or(base);
        Self { base_url: base.to_string(), http: JsonHttp::new(timeout), return_scores: true }
    }

    pub fn with_scores(mut self, return_scores: bool) -> Self {
        self.return_scores = return_scores;
        self
    }

    pub fn client_retrieve(&self, queries: &[String], topk: Option<usize>) -> Result<RetrieveResponse, RetrievalError> {
        let request = RetrieveRequest { queries: queries.to_vec(), topk, return_scores: self.return_scores };
        self.send(&request)
    }

    pub fn send(&self, request: &RetrieveRequest) -> Result<RetrieveResponse, RetrievalError> {
        let resp = self.http.post(&format!("{}/retrieve", self.base_url), request)?;
        if !resp.is_success() {
            let message = serde_json::from_str::<ErrorBody>(&resp.body).map(|e| e.error).unwrap_or(resp.body);
            return Err(RetrievalError::Protocol { status: resp.status, message });
        }
        let decoded: RetrieveResponse =
            serde_json::from_str(&resp.body).map_err(|e| RetrievalError::Decode(e.to_string()))?;
        if decoded.result.len() != request.queries.len() {
            return Err(RetrievalError::Decode(format!(
                "`result` has {} entries for {} queries",
                decoded.result.len(),
                request.queries.len()
            )));
        }
        Ok(decoded)
    }

    pub fn health(&self) -> Result<Health, RetrievalError> {
        let resp = self.http.get(&format!("{}/health", self.base_url))?;
        if !resp.is_success() {
            return Err(RetrievalError::Protocol { status: resp.status, message: resp.body });
        }
        serde_json::from_str(&resp.body).map_err(|e| RetrievalError::Decode(e.to_string()))
    }
}

impl Retriever for HttpRetriever {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        Ok(self.client_retrieve(queries, Some(topk))?.into_docs())
    }
}
