//! Document and QA-dataset storage in line-delimited JSON.
//!
//! Corpus records carry `id` plus either pre-joined `contents` or a
//! `title` / `text` pair. The store keeps title and body separately and
//! derives `contents` as `title + "\n" + body`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::tokenize;
use crate::reward::{normalize_answer, NormalizationConfig};

pub const STORE_DOCS_FILE: &str = "documents.jsonl";
pub const STORE_META_FILE: &str = "meta.json";
pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` not found")]
    NotFound(String),
    #[error("{path}:{line}: invalid QA record: {reason}")]
    InvalidSample { path: String, line: usize, reason: String },
    #[error("invalid QA sample `{id}`: {reason}")]
    Validation { id: String, reason: String },
    #[error("unknown category label `{0}`")]
    UnknownCategory(String),
    #[error("test fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("unsupported store format version {0}")]
    Version(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>) -> Self {
        Self { id: id.into(), title: title.into(), body: body.into() }
    }

    /// Split pre-joined contents at the first newline. Contents without a
    /// newline become a body with an empty title.
    pub fn from_contents(id: impl Into<String>, contents: &str) -> Self {
        match contents.split_once('\n') {
            Some((title, body)) => Self::new(id, title, body),
            None => Self::new(id, "", contents),
        }
    }

    pub fn contents(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + 1 + self.body.len());
        s.push_str(&self.title);
        s.push('\n');
        s.push_str(&self.body);
        s
    }
}

/// Raw on-disk corpus record.
#[derive(Debug, Deserialize)]
struct CorpusRecord {
    id: serde_json::Value,
    #[serde(default)]
    contents: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

impl CorpusRecord {
    fn into_document(self) -> Result<Document, String> {
        let id = match self.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(format!("`id` must be a string, got {other}")),
        };
        if id.is_empty() {
            return Err("`id` is empty".into());
        }
        match (self.contents, self.title, self.text) {
            (Some(contents), None, None) => Ok(Document::from_contents(id, &contents)),
            (None, Some(title), Some(text)) => Ok(Document::new(id, title, text)),
            (Some(_), _, _) => Err("record has both `contents` and `title`/`text`".into()),
            _ => Err("record needs `contents` or both `title` and `text`".into()),
        }
    }
}

/// Summary of an ingested corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHandle {
    pub doc_count: usize,
    /// Mean token count of `contents`.
    pub avgdl: f64,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    format_version: u32,
    doc_count: usize,
    avgdl: f64,
}

/// Loaded corpus. Read-only after construction; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    handle: CorpusHandle,
}

impl CorpusStore {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        Self::assemble(docs, None)
    }

    fn assemble(docs: Vec<Document>, path: Option<PathBuf>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        let avgdl = mean_token_length(&docs);
        let handle = CorpusHandle { doc_count: docs.len(), avgdl, path };
        Ok(Self { docs, by_id, handle })
    }

    /// Read a line-delimited corpus file without persisting it.
    pub fn read_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let docs = read_corpus_records(path)?;
        Self::assemble(docs, None)
    }

    /// Ingest `input` and persist the canonical store under `store_dir`.
    pub fn ingest(input: &Path, store_dir: &Path) -> Result<Self, CorpusError> {
        let docs = read_corpus_records(input)?;
        let mut store = Self::assemble(docs, Some(store_dir.to_path_buf()))?;
        fs::create_dir_all(store_dir)?;
        let mut w = BufWriter::new(fs::File::create(store_dir.join(STORE_DOCS_FILE))?);
        for d in &store.docs {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let meta = StoreMeta {
            format_version: STORE_FORMAT_VERSION,
            doc_count: store.handle.doc_count,
            avgdl: store.handle.avgdl,
        };
        fs::write(store_dir.join(STORE_META_FILE), serde_json::to_string_pretty(&meta)?)?;
        store.handle.path = Some(store_dir.to_path_buf());
        Ok(store)
    }

    /// Open a store written by [`CorpusStore::ingest`].
    pub fn open(store_dir: &Path) -> Result<Self, CorpusError> {
        let meta: StoreMeta = serde_json::from_str(&fs::read_to_string(store_dir.join(STORE_META_FILE))?)?;
        if meta.format_version != STORE_FORMAT_VERSION {
            return Err(CorpusError::Version(meta.format_version));
        }
        let path = store_dir.join(STORE_DOCS_FILE);
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut docs = Vec::with_capacity(meta.doc_count);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            docs.push(doc);
        }
        Self::assemble(docs, Some(store_dir.to_path_buf()))
    }

    /// Open either a store directory or a raw corpus file.
    pub fn open_any(path: &Path) -> Result<Self, CorpusError> {
        if path.is_dir() {
            Self::open(path)
        } else {
            Self::read_jsonl(path)
        }
    }

    pub fn handle(&self) -> &CorpusHandle {
        &self.handle
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Result<&Document, CorpusError> {
        self.by_id.get(id).map(|&i| &self.docs[i]).ok_or_else(|| CorpusError::NotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }
}

fn mean_token_length(docs: &[Document]) -> f64 {
    if docs.is_empty() {
        return 0.0;
    }
    let total: usize = docs.iter().map(|d| tokenize(&d.contents()).len()).sum();
    total as f64 / docs.len() as f64
}

fn read_corpus_records(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed =
            |reason: String| CorpusError::Malformed { path: path.display().to_string(), line: i + 1, reason };
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let doc = record.into_document().map_err(malformed)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// The ten question categories. Labels are stored in their short form;
/// parsing also accepts the long descriptions used in the generation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    GeneticMutations,
    Therapeutics,
    ProteinFunction,
    Methods,
    DiseaseCausation,
    Biomarkers,
    BioinformaticsDatabases,
    ClinicalScales,
    Anatomy,
    Psychology,
}

impl Category {
    pub const ALL: [Category; 10] = [
        Category::GeneticMutations,
        Category::Therapeutics,
        Category::ProteinFunction,
        Category::Methods,
        Category::DiseaseCausation,
        Category::Biomarkers,
        Category::BioinformaticsDatabases,
        Category::ClinicalScales,
        Category::Anatomy,
        Category::Psychology,
    ];

    /// Category number used by the generation prompt (1-based).
    pub fn number(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        (1..=10).contains(&n).then(|| Self::ALL[n as usize - 1])
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::GeneticMutations => "Genetic mutations",
            Category::Therapeutics => "Therapeutics & clinical evidence",
            Category::ProteinFunction => "Protein function & signalling",
            Category::Methods => "Methods & resources",
            Category::DiseaseCausation => "Disease causation & pathogens",
            Category::Biomarkers => "Biomarkers & diagnostics",
            Category::BioinformaticsDatabases => "Bioinformatics databases",
            Category::ClinicalScales => "Clinical scales & classifications",
            Category::Anatomy => "Anatomy & cellular localisation",
            Category::Psychology => "Psychology & behavioural health",
        }
    }

    /// Long description as written in the QA-generation prompt.
    pub fn description(self) -> &'static str {
        match self {
            Category::GeneticMutations => "Genetic inheritance & disease-linked mutations",
            Category::Therapeutics => "Therapeutics, indications & clinical evidence",
            Category::ProteinFunction => "Protein function, localization & signalling/enzymatic interactions",
            Category::Methods => "Experimental & computational methods, resources & acronyms",
            Category::DiseaseCausation => "Disease causation & pathogens",
            Category::Biomarkers => "Biomarkers & diagnostic tests",
            Category::BioinformaticsDatabases => "Bioinformatics databases & curated resources",
            Category::ClinicalScales => "Clinical grading & diagnostic scales / classification systems",
            Category::Anatomy => "Anatomical / cellular structures & localisation",
            Category::Psychology => "Psychology and behavioral health",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Category::Methods => &["Experimental & computational methods"],
            Category::ProteinFunction => &["Protein function & signaling"],
            Category::Psychology => &["Psychology & behavioral health"],
            _ => &[],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim();
        Category::ALL
            .into_iter()
            .find(|c| {
                c.label().eq_ignore_ascii_case(key)
                    || c.description().eq_ignore_ascii_case(key)
                    || c.aliases().iter().any(|a| a.eq_ignore_ascii_case(key))
            })
            .ok_or_else(|| CorpusError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    /// Canonical answer first, then synonyms.
    pub golden_answers: Vec<String>,
    pub category: Category,
    pub source_doc_id: String,
    pub paraphrased: bool,
}

impl QASample {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| CorpusError::Validation { id: self.id.clone(), reason: reason.into() };
        if self.id.is_empty() {
            return Err(fail("empty id"));
        }
        if self.question.trim().is_empty() {
            return Err(fail("empty question"));
        }
        if self.golden_answers.is_empty() {
            return Err(fail("golden_answers is empty"));
        }
        let config = NormalizationConfig::default();
        let mut seen = HashSet::new();
        for g in &self.golden_answers {
            let n = normalize_answer(g, &config);
            if n.is_empty() {
                return Err(fail("golden answer normalizes to an empty string"));
            }
            if !seen.insert(n) {
                return Err(fail(&format!("duplicate golden answer `{g}` after normalization")));
            }
        }
        Ok(())
    }
}

pub fn load_qa_dataset(path: &Path) -> Result<Vec<QASample>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid =
            |reason: String| CorpusError::InvalidSample { path: path.display().to_string(), line: i + 1, reason };
        let sample: QASample = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        sample.validate().map_err(|e| invalid(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_qa_dataset(path: &Path, samples: &[QASample]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(qa_dataset_jsonl(samples)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn qa_dataset_jsonl(samples: &[QASample]) -> Result<String, CorpusError> {
    let mut s = String::new();
    for sample in samples {
        s.push_str(&serde_json::to_string(sample)?);
        s.push('\n');
    }
    Ok(s)
}

/// Random train/test partition. `|test| = round(test_fraction * N)`; both
/// halves keep the input order.
pub fn split_dataset(
    samples: &[QASample],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<QASample>, Vec<QASample>), CorpusError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let n = samples.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = samples.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|(s, _)| s).collect(), test.into_iter().map(|(s, _)| s).collect()))
}

/// Per-category counts, in category order.
pub fn category_counts(samples: &[QASample]) -> BTreeMap<Category, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.category).or_insert(0) += 1;
    }
    counts
}
