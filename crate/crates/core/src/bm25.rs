//! Okapi BM25 over an in-memory inverted index.
//!
//! Scoring uses the smoothed, nonnegative IDF
//!
//! ```text
//! idf(t)   = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(d) = sum over query tokens t of idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
//! ```
//!
//! Repeated query tokens contribute once per occurrence. Results are ordered
//! by descending score with ties broken by ascending document id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;

/// Version tag written into every serialized index.
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("unknown document id `{0}`")]
    UnknownDocument(String),
    #[error("unsupported index format version {found} (expected {INDEX_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Lowercase alphanumeric tokens. Anything that is not alphanumeric is a
/// boundary; no stemming is applied.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Tokenizer plus optional stopword filtering. The default analyzer has no
/// stopwords, which makes it identical to [`tokenize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

impl Analyzer {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self { stopwords: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect() }
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        let mut tokens = tokenize(text);
        if !self.stopwords.is_empty() {
            tokens.retain(|t| !self.stopwords.contains(t));
        }
        tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Document-length normalization.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(IndexError::InvalidParams(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in the index's document table.
    pub doc: u32,
    pub tf: u32,
}

/// Shard index, per-document lengths and term postings for one build shard.
type ShardPostings = (usize, Vec<u32>, BTreeMap<String, Vec<Posting>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Immutable BM25 index. Document order follows the corpus it was built
/// from; postings are sorted by document position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    format_version: u32,
    params: Bm25Params,
    analyzer: Analyzer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    #[serde(skip)]
    id_lookup: HashMap<String, u32>,
}

impl Index {
    /// Build from any sequence of `(id, contents)` pairs.
    pub fn build<'a, I>(docs: I, params: Bm25Params, analyzer: Analyzer) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let docs: Vec<(&str, &str)> = docs.into_iter().collect();
        let shards = rayon::current_num_threads().max(1);
        Self::build_sharded(&docs, params, analyzer, shards)
    }

    /// Build with an explicit shard count. The result does not depend on
    /// `shards`.
    pub fn build_sharded(
        docs: &[(&str, &str)],
        params: Bm25Params,
        analyzer: Analyzer,
        shards: usize,
    ) -> Result<Self, IndexError> {
        params.validate()?;
        if docs.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let chunk = docs.len().div_ceil(shards.max(1));

        // Each shard produces term -> postings for a contiguous document range.
        let partials: Vec<ShardPostings> = docs
            .par_chunks(chunk)
            .enumerate()
            .map(|(shard, slice)| {
                let base = shard * chunk;
                let mut lengths = Vec::with_capacity(slice.len());
                let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
                for (offset, (_, contents)) in slice.iter().enumerate() {
                    let tokens = analyzer.analyze(contents);
                    lengths.push(tokens.len() as u32);
                    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
                    for tok in tokens {
                        *counts.entry(tok).or_default() += 1;
                    }
                    let doc = (base + offset) as u32;
                    for (term, tf) in counts {
                        postings.entry(term).or_default().push(Posting { doc, tf });
                    }
                }
                (shard, lengths, postings)
            })
            .collect();

        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        // par_chunks + collect preserves shard order, so appending keeps
        // every posting list sorted by document position.
        for (_, lengths, partial) in partials {
            doc_lengths.extend(lengths);
            for (term, list) in partial {
                postings.entry(term).or_default().extend(list);
            }
        }

        let mut id_lookup = HashMap::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());
        for (pos, (id, _)) in docs.iter().enumerate() {
            if id_lookup.insert((*id).to_string(), pos as u32).is_some() {
                return Err(IndexError::Corrupt(format!("duplicate document id `{id}`")));
            }
            doc_ids.push((*id).to_string());
        }

        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;

        Ok(Self {
            format_version: INDEX_FORMAT_VERSION,
            params,
            analyzer,
            doc_ids,
            doc_lengths,
            avgdl,
            postings,
            id_lookup,
        })
    }

    pub fn from_corpus(corpus: &CorpusStore, params: Bm25Params) -> Result<Self, IndexError> {
        Self::from_corpus_with(corpus, params, Analyzer::default())
    }

    pub fn from_corpus_with(corpus: &CorpusStore, params: Bm25Params, analyzer: Analyzer) -> Result<Self, IndexError> {
        let contents: Vec<String> = corpus.documents().iter().map(|d| d.contents()).collect();
        let pairs: Vec<(&str, &str)> =
            corpus.documents().iter().zip(&contents).map(|(d, c)| (d.id.as_str(), c.as_str())).collect();
        Self::build(pairs, params, analyzer)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.id_lookup.get(id).map(|&p| self.doc_lengths[p as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.document_frequency(term))
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avgdl;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document for an already-tokenized query.
    pub fn score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64, IndexError> {
        let pos = *self.id_lookup.get(doc_id).ok_or_else(|| IndexError::UnknownDocument(doc_id.to_string()))?;
        let len = self.doc_lengths[pos as usize];
        let mut total = 0.0;
        for term in query_tokens {
            let list = self.postings(term);
            if let Ok(i) = list.binary_search_by_key(&pos, |p| p.doc) {
                total += self.term_weight(idf(self.doc_count(), list.len()), list[i].tf, len);
            }
        }
        Ok(total)
    }

    /// Top-`k` documents for `query`. Documents sharing no term with the
    /// query are never returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<Hit> {
        let tokens = self.analyzer.analyze(query);
        self.search_tokens(&tokens, k)
    }

    pub fn search_tokens(&self, query_tokens: &[String], k: usize) -> Vec<Hit> {
        if k == 0 || query_tokens.is_empty() {
            return Vec::new();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query_tokens {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = idf(self.doc_count(), list.len());
            for p in list {
                let w = self.term_weight(idf, p.tf, self.doc_lengths[p.doc as usize]);
                *acc.entry(p.doc).or_insert(0.0) += w;
            }
        }
        let mut scored: Vec<(u32, f64)> = acc.into_iter().collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        scored.truncate(k);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc, score))| Hit { id: self.doc_ids[doc as usize].clone(), score, rank: i + 1 })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let writer = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut index: Index = serde_json::from_reader(reader)?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Version { found: index.format_version });
        }
        index.params.validate()?;
        if index.doc_ids.len() != index.doc_lengths.len() {
            return Err(IndexError::Corrupt("document table length mismatch".into()));
        }
        let n = index.doc_ids.len() as u32;
        if index.postings.values().flatten().any(|p| p.doc >= n) {
            return Err(IndexError::Corrupt("posting refers to a missing document".into()));
        }
        index.id_lookup = index.doc_ids.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect();
        Ok(index)
    }

    pub fn to_json(&self) -> Result<String, IndexError> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn idf(n: usize, df: usize) -> f64 {
    let n = n as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}
