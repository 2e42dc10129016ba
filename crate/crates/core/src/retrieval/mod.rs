//! Batched top-k retrieval: the in-process engine, the HTTP service that
//! exposes it, and the matching client.
//!
//! Wire format (JSON):
//!
//! ```text
//! POST /retrieve  {"queries": [..], "topk": 3, "return_scores": true}
//!   200 -> {"result": [[{"document": {"id": .., "contents": ..}, "score": ..}, ..], ..]}
//!   400 -> {"error": ".."}
//! GET  /health    -> {"doc_count": .., "avgdl": .., "params": {"k1": .., "b": ..}, ..}
//! ```

mod client;
mod server;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use client::HttpRetriever;
pub use server::{router, RunningService, ServiceError};

use crate::bm25::{Bm25Params, Index};
use crate::corpus::CorpusStore;
use crate::http::TransportError;
use crate::protocol::RetrievedDoc;

pub const DEFAULT_TOPK: usize = 3;
pub const MAX_TOPK: usize = 100;
pub const MAX_BATCH: usize = 512;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RetrievalError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server rejected request ({status}): {message}")]
    Protocol { status: u16, message: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("index and corpus disagree: {0}")]
    Inconsistent(String),
}

/// Request size limits enforced by the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub default_topk: usize,
    pub max_topk: usize,
    pub max_batch: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { default_topk: DEFAULT_TOPK, max_topk: MAX_TOPK, max_batch: MAX_BATCH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub queries: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    #[serde(default)]
    pub return_scores: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDocument {
    pub id: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHit {
    pub document: WireDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub result: Vec<Vec<WireHit>>,
}

impl RetrieveResponse {
    pub fn into_docs(self) -> Vec<Vec<RetrievedDoc>> {
        self.result
            .into_iter()
            .map(|hits| {
                hits.into_iter()
                    .map(|h| RetrievedDoc { id: h.document.id, contents: h.document.contents, score: h.score })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub doc_count: usize,
    pub avgdl: f64,
    pub params: Bm25Params,
    pub default_topk: usize,
    pub max_topk: usize,
}

/// Index plus the document contents needed to answer requests.
#[derive(Debug)]
pub struct SearchEngine {
    index: Index,
    corpus: CorpusStore,
}

impl SearchEngine {
    pub fn new(index: Index, corpus: CorpusStore) -> Result<Self, RetrievalError> {
        if let Some(missing) = index.doc_ids().iter().find(|id| !corpus.contains(id)) {
            return Err(RetrievalError::Inconsistent(format!("document `{missing}` is not in the corpus")));
        }
        Ok(Self { index, corpus })
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn corpus(&self) -> &CorpusStore {
        &self.corpus
    }

    pub fn health(&self, limits: &Limits) -> Health {
        Health {
            doc_count: self.index.doc_count(),
            avgdl: self.index.avgdl(),
            params: self.index.params(),
            default_topk: limits.default_topk,
            max_topk: limits.max_topk,
        }
    }

    pub fn search_docs(&self, query: &str, topk: usize) -> Vec<RetrievedDoc> {
        self.index
            .search(query, topk)
            .iter()
            .map(|hit| {
                let doc = self.corpus.get(&hit.id).expect("index ids are checked against the corpus");
                RetrievedDoc::from_hit(hit, doc.contents())
            })
            .collect()
    }

    /// Validate and answer a retrieval request.
    pub fn handle_retrieve(
        &self,
        request: &RetrieveRequest,
        limits: &Limits,
    ) -> Result<RetrieveResponse, RetrievalError> {
        let topk = validate(request, limits)?;
        let result = request
            .queries
            .iter()
            .map(|q| {
                self.search_docs(q, topk)
                    .into_iter()
                    .map(|d| WireHit {
                        document: WireDocument { id: d.id, contents: d.contents },
                        score: if request.return_scores { d.score } else { None },
                    })
                    .collect()
            })
            .collect();
        Ok(RetrieveResponse { result })
    }
}

fn validate(request: &RetrieveRequest, limits: &Limits) -> Result<usize, RetrievalError> {
    if request.queries.is_empty() {
        return Err(RetrievalError::InvalidRequest("`queries` must not be empty".into()));
    }
    if request.queries.len() > limits.max_batch {
        return Err(RetrievalError::InvalidRequest(format!(
            "batch of {} queries exceeds the maximum of {}",
            request.queries.len(),
            limits.max_batch
        )));
    }
    let topk = request.topk.unwrap_or(limits.default_topk);
    if topk == 0 || topk > limits.max_topk {
        return Err(RetrievalError::InvalidRequest(format!("`topk` must be in 1..={}, got {topk}", limits.max_topk)));
    }
    Ok(topk)
}

/// Anything that can answer batched top-k queries.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError>;
}

impl Retriever for SearchEngine {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        if topk == 0 {
            return Err(RetrievalError::InvalidRequest("`topk` must be positive".into()));
        }
        Ok(queries.iter().map(|q| self.search_docs(q, topk)).collect())
    }
}

impl<R: Retriever + ?Sized> Retriever for Arc<R> {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        (**self).retrieve(queries, topk)
    }
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        (**self).retrieve(queries, topk)
    }
}

/// Wraps a retriever and counts the queries sent through it.
#[derive(Debug)]
pub struct CountingRetriever<R> {
    inner: R,
    calls: AtomicUsize,
    queries: AtomicUsize,
}

impl<R> CountingRetriever<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, calls: AtomicUsize::new(0), queries: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }
}

impl<R: Retriever> Retriever for CountingRetriever<R> {
    fn retrieve(&self, queries: &[String], topk: usize) -> Result<Vec<Vec<RetrievedDoc>>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.queries.fetch_add(queries.len(), Ordering::SeqCst);
        self.inner.retrieve(queries, topk)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::Document;

    pub(crate) fn fixture_engine() -> SearchEngine {
        let corpus = CorpusStore::from_documents(vec![
            Document::new("d1", "gene mutation", "cancer"),
            Document::new("d2", "protein", "folding"),
            Document::new("d3", "gene therapy", "gene"),
        ])
        .unwrap();
        let index = Index::from_corpus(&corpus, Bm25Params::default()).unwrap();
        SearchEngine::new(index, corpus).unwrap()
    }

    fn req(queries: &[&str], topk: Option<usize>) -> RetrieveRequest {
        RetrieveRequest { queries: queries.iter().map(|s| s.to_string()).collect(), topk, return_scores: true }
    }

    #[test]
    fn retrieve_matches_index_search() {
        let engine = fixture_engine();
        let resp = engine.handle_retrieve(&req(&["gene"], Some(2)), &Limits::default()).unwrap();
        let ids: Vec<_> = resp.result[0].iter().map(|h| h.document.id.as_str()).collect();
        assert_eq!(ids, ["d3", "d1"]);
        let direct = engine.index().search("gene", 2);
        for (h, d) in resp.result[0].iter().zip(&direct) {
            assert_eq!(h.score, Some(d.score));
        }
        assert_eq!(resp.result[0][0].document.contents, "gene therapy\ngene");
    }

    #[test]
    fn batch_order_preserved() {
        let engine = fixture_engine();
        let resp = engine.handle_retrieve(&req(&["protein", "gene"], None), &Limits::default()).unwrap();
        assert_eq!(resp.result.len(), 2);
        assert_eq!(resp.result[0][0].document.id, "d2");
        assert_eq!(resp.result[1][0].document.id, "d3");
    }

    #[test]
    fn validation_errors() {
        let engine = fixture_engine();
        let limits = Limits::default();
        assert!(matches!(
            engine.handle_retrieve(&req(&["gene"], Some(0)), &limits),
            Err(RetrievalError::InvalidRequest(_))
        ));
        assert!(engine.handle_retrieve(&req(&["gene"], Some(101)), &limits).is_err());
        assert!(engine.handle_retrieve(&req(&[], Some(1)), &limits).is_err());
        let big: Vec<&str> = vec!["gene"; 513];
        assert!(engine.handle_retrieve(&req(&big, Some(1)), &limits).is_err());
    }

    #[test]
    fn scores_omitted_unless_requested() {
        let engine = fixture_engine();
        let mut r = req(&["gene"], Some(1));
        r.return_scores = false;
        let resp = engine.handle_retrieve(&r, &Limits::default()).unwrap();
        assert_eq!(resp.result[0][0].score, None);
        assert!(!serde_json::to_string(&resp).unwrap().contains("score"));
    }

    #[test]
    fn counting_wrapper_counts() {
        let counter = CountingRetriever::new(fixture_engine());
        counter.retrieve(&["gene".into(), "protein".into()], 1).unwrap();
        assert_eq!((counter.calls(), counter.queries()), (1, 2));
    }
}
