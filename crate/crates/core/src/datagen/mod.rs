//! Factoid QA generation from abstracts: generate three category-guided QAs
//! per abstract, expand golden answers with synonyms, paraphrase a sampled
//! fraction of questions, filter, and emit the dataset with statistics.

mod llm;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use llm::{FixtureLlm, FixtureRule, HttpLlm, LlmClient, LlmError};

use crate::bm25::tokenize;
use crate::corpus::{Category, CorpusError, CorpusStore, Document, QASample};
use crate::reward::{normalize_answer, NormalizationConfig};
use crate::rollout::derive_seed;

pub const GENERATE_PROMPT: &str = include_str!("../../assets/prompts/generate_qas.v1.txt");
pub const SYNONYM_PROMPT: &str = include_str!("../../assets/prompts/synonyms.v1.txt");
pub const PARAPHRASE_PROMPT: &str = include_str!("../../assets/prompts/paraphrase.v1.txt");

/// QAs requested per abstract by the generation prompt.
pub const QAS_PER_ABSTRACT: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("document {0} has no text")]
    EmptyDocument(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("asked for {requested} abstracts but the corpus has {available}")]
    TooManyAbstracts { requested: usize, available: usize },
    #[error("paraphrase fraction must be in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Prompt templates. Placeholders are `{title_abstract}`, `{question}` and
/// `{answer}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub generate: String,
    pub synonyms: String,
    pub paraphrase: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            generate: GENERATE_PROMPT.to_string(),
            synonyms: SYNONYM_PROMPT.to_string(),
            paraphrase: PARAPHRASE_PROMPT.to_string(),
        }
    }
}

impl PromptSet {
    /// Built-in templates, overridden by `generate_qas.txt`, `synonyms.txt`
    /// or `paraphrase.txt` when present in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, DatagenError> {
        let mut set = Self::default();
        for (name, slot) in [
            ("generate_qas.txt", &mut set.generate),
            ("synonyms.txt", &mut set.synonyms),
            ("paraphrase.txt", &mut set.paraphrase),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }
}

/// Substitute `{key}` placeholders in one pass, so substituted text is
/// never rescanned.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (key, value) in values {
            let placeholder = format!("{{{key}}}");
            if tail.starts_with(&placeholder) {
                out.push_str(value);
                rest = &tail[placeholder.len()..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// A generated QA before synonym expansion and filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateQA {
    pub question: String,
    pub answer: String,
    /// Extra names given when the answer was written as a list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub cat_num: u8,
    pub cat: String,
    pub source_doc_id: String,
}

impl CandidateQA {
    pub fn category(&self) -> Category {
        Category::from_number(self.cat_num).expect("cat_num validated at parse time")
    }
}

/// Something the pipeline dropped or repaired, with the rule that fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub source_doc_id: String,
    pub rule: String,
    pub detail: String,
}

impl Diagnostic {
    fn new(doc: &str, rule: &str, detail: impl Into<String>) -> Self {
        Self { source_doc_id: doc.to_string(), rule: rule.to_string(), detail: detail.into() }
    }
}

/// Inner text of every `<tag>...</tag>` block in order. An opening tag
/// that is followed by another opening tag before its close is reported
/// as `None`.
fn blocks<'a>(text: &'a str, tag: &str) -> Vec<Option<&'a str>> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body = &rest[start + open.len()..];
        let next_open = body.find(&open);
        match body.find(&close) {
            Some(end) if next_open.is_none_or(|n| n > end) => {
                out.push(Some(&body[..end]));
                rest = &body[end + close.len()..];
            }
            _ => {
                out.push(None);
                match next_open {
                    Some(n) => rest = &body[n..],
                    None => break,
                }
            }
        }
    }
    out
}

fn first_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    blocks(text, tag).into_iter().next().flatten().map(str::trim)
}

/// Parse a Python-style list of quoted strings such as `['PKD', "Crohn's"]`.
pub fn parse_list_literal(text: &str) -> Option<Vec<String>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut out = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        let quote = match chars.next() {
            None => break,
            Some(q @ ('\'' | '"')) => q,
            Some(_) => return None,
        };
        let mut item = String::new();
        loop {
            match chars.next()? {
                '\\' => item.push(chars.next()?),
                c if c == quote => break,
                c => item.push(c),
            }
        }
        out.push(item.trim().to_string());
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        match chars.next() {
            None => break,
            Some(',') => continue,
            Some(_) => return None,
        }
    }
    Some(out)
}

fn parse_qa(entry: &str, doc_id: &str) -> Result<(CandidateQA, Option<Diagnostic>), Diagnostic> {
    let malformed = |detail: &str| Diagnostic::new(doc_id, "malformed_entry", detail);
    let question =
        first_block(entry, "question").filter(|q| !q.is_empty()).ok_or_else(|| malformed("no <question>"))?;
    let raw_answer = first_block(entry, "answer").filter(|a| !a.is_empty()).ok_or_else(|| malformed("no <answer>"))?;
    let mut names = match parse_list_literal(raw_answer) {
        Some(list) => list.into_iter().filter(|s| !s.is_empty()).collect(),
        None => vec![raw_answer.to_string()],
    };
    if names.is_empty() {
        return Err(malformed("empty answer list"));
    }
    let answer = names.remove(0);

    let by_number = first_block(entry, "cat_num").and_then(|n| n.parse::<u8>().ok()).and_then(Category::from_number);
    let cat_text = first_block(entry, "cat").unwrap_or("");
    let by_label = cat_text.parse::<Category>().ok();
    let (category, repair) = match (by_number, by_label) {
        (Some(n), Some(l)) if n == l => (n, None),
        (Some(n), _) => {
            let detail = format!("label {cat_text:?} replaced by {:?} for cat_num {}", n.label(), n.number());
            (n, Some(Diagnostic::new(doc_id, "category_label_mismatch", detail)))
        }
        (None, Some(l)) => {
            let detail = format!("missing or invalid cat_num, taken from label {cat_text:?}");
            (l, Some(Diagnostic::new(doc_id, "category_number_missing", detail)))
        }
        (None, None) => return Err(malformed("no valid category")),
    };
    let qa = CandidateQA {
        question: question.to_string(),
        answer,
        aliases: names,
        cat_num: category.number(),
        cat: category.label().to_string(),
        source_doc_id: doc_id.to_string(),
    };
    Ok((qa, repair))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub candidates: Vec<CandidateQA>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Ask the LLM for QAs about one abstract and parse the `<qas>` block.
/// Malformed entries are dropped with a diagnostic; at most three
/// candidates are kept.
pub fn generate_qas(document: &Document, llm: &dyn LlmClient, prompts: &PromptSet) -> Result<Generated, DatagenError> {
    if document.title.trim().is_empty() && document.body.trim().is_empty() {
        return Err(DatagenError::EmptyDocument(document.id.clone()));
    }
    let prompt = fill_template(&prompts.generate, &[("title_abstract", &document.contents())]);
    let completion = llm.complete(&prompt)?;
    Ok(parse_generation(&completion, &document.id))
}

pub fn parse_generation(completion: &str, doc_id: &str) -> Generated {
    let mut out = Generated::default();
    let scope = first_block(completion, "qas").unwrap_or(completion);
    let entries = blocks(scope, "qa");
    if entries.is_empty() {
        out.diagnostics.push(Diagnostic::new(doc_id, "unparseable_completion", "no <qa> entries"));
        return out;
    }
    for entry in entries {
        let Some(entry) = entry else {
            out.diagnostics.push(Diagnostic::new(doc_id, "malformed_entry", "unterminated <qa>"));
            continue;
        };
        match parse_qa(entry, doc_id) {
            Ok((qa, repair)) => {
                out.diagnostics.extend(repair);
                if out.candidates.len() < QAS_PER_ABSTRACT {
                    out.candidates.push(qa);
                } else {
                    out.diagnostics.push(Diagnostic::new(doc_id, "extra_entry", qa.question));
                }
            }
            Err(d) => out.diagnostics.push(d),
        }
    }
    for d in &out.diagnostics {
        log::debug!("{}: {}: {}", d.source_doc_id, d.rule, d.detail);
    }
    out
}

/// Append `extra` names to `names`, skipping any that normalize to a name
/// already present.
fn push_distinct(names: &mut Vec<String>, extra: impl IntoIterator<Item = String>) {
    let config = NormalizationConfig::default();
    for name in extra {
        let key = normalize_answer(&name, &config);
        if key.is_empty() {
            continue;
        }
        if !names.iter().any(|n| normalize_answer(n, &config) == key) {
            names.push(name);
        }
    }
}

/// Canonical answer first, then synonyms from the LLM, deduplicated under
/// answer normalization. Failures fall back to the canonical answer alone.
pub fn generate_synonyms(
    question: &str,
    answer: &str,
    llm: &dyn LlmClient,
    prompts: &PromptSet,
) -> (Vec<String>, Option<String>) {
    let mut names = vec![answer.trim().to_string()];
    let prompt = fill_template(&prompts.synonyms, &[("question", question), ("answer", answer)]);
    let completion = match llm.complete(&prompt) {
        Ok(c) => c,
        Err(e) => return (names, Some(format!("synonym call failed: {e}"))),
    };
    let tagged: Vec<String> =
        blocks(&completion, "synonym").into_iter().flatten().map(|s| s.trim().to_string()).collect();
    let parsed = if !tagged.is_empty() {
        tagged
    } else if let Some(list) = parse_list_literal(&completion) {
        list
    } else if completion.trim().is_empty() || completion.contains("<synonyms>") {
        Vec::new()
    } else {
        return (names, Some("unparseable synonym completion".into()));
    };
    push_distinct(&mut names, parsed);
    (names, None)
}

/// True when `a` and `b` share a run of `n` consecutive tokens.
pub fn shares_ngram(a: &str, b: &str, n: usize) -> bool {
    let ta = tokenize(a);
    let tb = tokenize(b);
    if n == 0 || ta.len() < n || tb.len() < n {
        return false;
    }
    let grams: std::collections::HashSet<&[String]> = ta.windows(n).collect();
    tb.windows(n).any(|w| grams.contains(w))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paraphrase {
    pub question: String,
    pub paraphrased: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

/// Rewrite `question`; the rewrite is kept only if it differs from the
/// original and shares no three-token run with it.
pub fn paraphrase_question(question: &str, answer: &str, llm: &dyn LlmClient, prompts: &PromptSet) -> Paraphrase {
    let fallback =
        |reason: String| Paraphrase { question: question.to_string(), paraphrased: false, rejection: Some(reason) };
    let prompt = fill_template(&prompts.paraphrase, &[("question", question), ("answer", answer)]);
    let completion = match llm.complete(&prompt) {
        Ok(c) => c,
        Err(e) => return fallback(format!("paraphrase call failed: {e}")),
    };
    let Some(rewrite) = first_block(&completion, "question").filter(|q| !q.is_empty()) else {
        return fallback("no <question> in completion".into());
    };
    if tokenize(rewrite) == tokenize(question) {
        return fallback("unchanged".into());
    }
    if shares_ngram(question, rewrite, 3) {
        return fallback("shares a three-word phrase with the original".into());
    }
    Paraphrase { question: rewrite.to_string(), paraphrased: true, rejection: None }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Case-insensitive substrings that tie a question to its source.
    pub referential_phrases: Vec<String>,
    /// Answers rejected when the canonical answer normalizes to one of these.
    pub binary_answers: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            referential_phrases: ["this study", "this paper", "this article", "the present study"]
                .map(String::from)
                .to_vec(),
            binary_answers: ["yes", "no", "true", "false"].map(String::from).to_vec(),
        }
    }
}

impl FilterConfig {
    /// Name of the first rule `qa` violates.
    pub fn violation(&self, qa: &CandidateQA) -> Option<Diagnostic> {
        let question = qa.question.to_lowercase();
        if let Some(p) = self.referential_phrases.iter().find(|p| question.contains(&p.to_lowercase())) {
            return Some(Diagnostic::new(
                &qa.source_doc_id,
                "document_referential",
                format!("{p:?} in {:?}", qa.question),
            ));
        }
        let config = NormalizationConfig::default();
        let answer = normalize_answer(&qa.answer, &config);
        if self.binary_answers.iter().any(|b| normalize_answer(b, &config) == answer) {
            return Some(Diagnostic::new(&qa.source_doc_id, "binary_answer", format!("answer {:?}", qa.answer)));
        }
        None
    }
}

pub fn filter_qas(candidates: Vec<CandidateQA>, config: &FilterConfig) -> (Vec<CandidateQA>, Vec<Diagnostic>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for qa in candidates {
        match config.violation(&qa) {
            Some(d) => {
                log::debug!("rejected {:?}: {}", qa.question, d.rule);
                rejected.push(d);
            }
            None => accepted.push(qa),
        }
    }
    (accepted, rejected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paraphrase_fraction: f64,
    pub seed: u64,
    /// Abstracts processed concurrently.
    pub max_in_flight: usize,
    pub filter: FilterConfig,
    #[serde(skip)]
    pub prompts: PromptSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paraphrase_fraction: 0.5,
            seed: 0,
            max_in_flight: 4,
            filter: FilterConfig::default(),
            prompts: PromptSet::default(),
        }
    }
}

/// Audit trail for one generated candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub sample_id: String,
    pub source_doc_id: String,
    pub original_question: String,
    pub question: String,
    pub paraphrase_attempted: bool,
    pub paraphrased: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase_rejection: Option<String>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub abstracts_sampled: usize,
    pub abstracts_failed: usize,
    pub candidates: usize,
    /// Candidates parsed per sampled abstract, in sampling order.
    pub candidates_per_abstract: Vec<(String, usize)>,
    pub accepted: usize,
    pub paraphrase_attempted: usize,
    pub paraphrased: usize,
    pub paraphrase_rate: f64,
    pub per_category: BTreeMap<String, usize>,
    pub rejections: BTreeMap<String, usize>,
    pub llm_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub dataset: Vec<QASample>,
    pub stats: PipelineStats,
    pub records: Vec<CandidateRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

impl PipelineOutput {
    /// Write `dataset.jsonl`, `records.jsonl`, `diagnostics.jsonl` and
    /// `stats.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DatagenError> {
        fs::create_dir_all(dir)?;
        crate::corpus::write_qa_dataset(&dir.join("dataset.jsonl"), &self.dataset)?;
        let jsonl = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        let records = self.records.iter().map(serde_json::to_string).collect::<Result<Vec<_>, _>>()?;
        fs::write(dir.join("records.jsonl"), jsonl(records))?;
        let diags = self.diagnostics.iter().map(serde_json::to_string).collect::<Result<Vec<_>, _>>()?;
        fs::write(dir.join("diagnostics.jsonl"), jsonl(diags))?;
        fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&self.stats)? + "\n")?;
        Ok(())
    }
}

struct CountingLlm<'a> {
    inner: &'a dyn LlmClient,
    calls: AtomicUsize,
}

impl LlmClient for CountingLlm<'_> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}

#[derive(Default)]
struct AbstractResult {
    candidates: usize,
    failed: bool,
    samples: Vec<QASample>,
    records: Vec<CandidateRecord>,
    diagnostics: Vec<Diagnostic>,
}

fn process_abstract(document: &Document, llm: &dyn LlmClient, config: &PipelineConfig, seed: u64) -> AbstractResult {
    let mut out = AbstractResult::default();
    let generated = match generate_qas(document, llm, &config.prompts) {
        Ok(g) => g,
        Err(e) => {
            log::warn!("skipping abstract {}: {e}", document.id);
            out.failed = true;
            out.diagnostics.push(Diagnostic::new(&document.id, "llm_failure", e.to_string()));
            return out;
        }
    };
    out.candidates = generated.candidates.len();
    out.diagnostics.extend(generated.diagnostics);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, candidate) in generated.candidates.into_iter().enumerate() {
        let sample_id = format!("{}-q{}", document.id, k + 1);
        let attempt = rng.random_bool(config.paraphrase_fraction);

        let (mut golden, synonym_problem) =
            generate_synonyms(&candidate.question, &candidate.answer, llm, &config.prompts);
        if let Some(p) = synonym_problem {
            out.diagnostics.push(Diagnostic::new(&document.id, "synonym_fallback", p));
        }
        push_distinct(&mut golden, candidate.aliases.iter().cloned());

        let paraphrase = if attempt {
            paraphrase_question(&candidate.question, &candidate.answer, llm, &config.prompts)
        } else {
            Paraphrase { question: candidate.question.clone(), paraphrased: false, rejection: None }
        };
        if let Some(r) = &paraphrase.rejection {
            out.diagnostics.push(Diagnostic::new(&document.id, "paraphrase_rejected", r.clone()));
        }

        // Both the source question and its rewrite must pass the filter.
        let rewritten = CandidateQA { question: paraphrase.question.clone(), ..candidate.clone() };
        let violation = config.filter.violation(&candidate).or_else(|| config.filter.violation(&rewritten));

        out.records.push(CandidateRecord {
            sample_id: sample_id.clone(),
            source_doc_id: document.id.clone(),
            original_question: candidate.question.clone(),
            question: paraphrase.question.clone(),
            paraphrase_attempted: attempt,
            paraphrased: paraphrase.paraphrased,
            paraphrase_rejection: paraphrase.rejection.clone(),
            accepted: violation.is_none(),
            rejection: violation.as_ref().map(|d| d.rule.clone()),
        });
        if let Some(d) = violation {
            out.diagnostics.push(d);
            continue;
        }
        out.samples.push(QASample {
            id: sample_id,
            question: paraphrase.question,
            golden_answers: golden,
            category: candidate.category(),
            source_doc_id: document.id.clone(),
            paraphrased: paraphrase.paraphrased,
        });
    }
    out
}

/// Sample `n_abstracts` documents with `config.seed` and run the full
/// generation pipeline on each. Output order follows sampling order.
pub fn run_pipeline(
    corpus: &CorpusStore,
    n_abstracts: usize,
    llm: &dyn LlmClient,
    config: &PipelineConfig,
) -> Result<PipelineOutput, DatagenError> {
    if !(0.0..=1.0).contains(&config.paraphrase_fraction) {
        return Err(DatagenError::BadFraction(config.paraphrase_fraction));
    }
    if n_abstracts > corpus.len() {
        return Err(DatagenError::TooManyAbstracts { requested: n_abstracts, available: corpus.len() });
    }
    if config.max_in_flight == 0 {
        return Err(DatagenError::Config("max_in_flight must be positive".into()));
    }
    let picked = sample(&mut ChaCha8Rng::seed_from_u64(config.seed), corpus.len(), n_abstracts).into_vec();
    let counting = CountingLlm { inner: llm, calls: AtomicUsize::new(0) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| DatagenError::Config(e.to_string()))?;
    let results: Vec<AbstractResult> = pool.install(|| {
        picked
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                process_abstract(&corpus.documents()[i], &counting, config, derive_seed(config.seed, pos as u64))
            })
            .collect()
    });

    let mut out = PipelineOutput::default();
    let stats = &mut out.stats;
    stats.abstracts_sampled = picked.len();
    for (&i, r) in picked.iter().zip(results) {
        stats.abstracts_failed += usize::from(r.failed);
        stats.candidates += r.candidates;
        stats.candidates_per_abstract.push((corpus.documents()[i].id.clone(), r.candidates));
        for rec in &r.records {
            stats.paraphrase_attempted += usize::from(rec.paraphrase_attempted);
            if let Some(rule) = &rec.rejection {
                *stats.rejections.entry(rule.clone()).or_default() += 1;
            }
        }
        for s in &r.samples {
            stats.paraphrased += usize::from(s.paraphrased);
            *stats.per_category.entry(s.category.label().to_string()).or_default() += 1;
            s.validate()?;
        }
        out.dataset.extend(r.samples);
        out.records.extend(r.records);
        out.diagnostics.extend(r.diagnostics);
    }
    stats.accepted = out.dataset.len();
    stats.paraphrase_rate = if stats.accepted == 0 { 0.0 } else { stats.paraphrased as f64 / stats.accepted as f64 };
    stats.llm_calls = counting.calls.load(Ordering::SeqCst);
    log::info!(
        "datagen: {} abstracts, {} candidates, {} accepted, {} paraphrased",
        stats.abstracts_sampled,
        stats.candidates,
        stats.accepted,
        stats.paraphrased
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qa_xml(q: &str, a: &str, num: &str, cat: &str) -> String {
        format!("<qa> <question> {q} </question>\n<answer> {a} </answer>\n<cat_num> {num} </cat_num>\n<cat> {cat} </cat>\n</qa>")
    }

    #[test]
    fn template_fill_is_single_pass() {
        assert_eq!(
            fill_template("Q: {question} A: {answer}", &[("question", "{answer}?"), ("answer", "x")]),
            "Q: {answer}? A: x"
        );
        assert_eq!(fill_template("{unknown} {", &[]), "{unknown} {");
    }

    #[test]
    fn verbatim_prompts_have_placeholders() {
        assert!(GENERATE_PROMPT.starts_with("BACKGROUND\n"));
        assert!(GENERATE_PROMPT.trim_end().ends_with("{title_abstract}"));
        assert!(PARAPHRASE_PROMPT.contains("three or more words in sequence"));
        assert!(SYNONYM_PROMPT.contains("{answer}"));
    }

    #[test]
    fn parses_three_entries() {
        let text = format!(
            "<qas>\n{}\n{}\n{}\n</qas>",
            qa_xml(
                "What gene is mutated in Sickle Cell Anemia?",
                "HBB",
                "1",
                "Genetic inheritance & disease-linked mutations"
            ),
            qa_xml(
                "What organism causes scarlet fever?",
                "['Group A Streptococcus', 'Streptococcus pyogenes']",
                "5",
                "Disease causation & pathogens"
            ),
            qa_xml(
                "Where is corticosterone synthesized?",
                "Adrenal glands",
                "9",
                "Anatomical / cellular structures & localisation"
            ),
        );
        let g = parse_generation(&text, "d1");
        assert_eq!(g.candidates.len(), 3);
        assert!(g.diagnostics.is_empty(), "{:?}", g.diagnostics);
        assert_eq!(g.candidates[1].answer, "Group A Streptococcus");
        assert_eq!(g.candidates[1].aliases, vec!["Streptococcus pyogenes"]);
        assert_eq!(g.candidates[1].cat_num, 5);
        assert_eq!(g.candidates[1].cat, "Disease causation & pathogens");
    }

    #[test]
    fn missing_answer_close_drops_only_that_entry() {
        let broken =
            "<qa> <question> Which drug? </question> <answer> Duloxetine <cat_num> 2 </cat_num> <cat> x </cat> </qa>";
        let text = format!("<qas>{}{}</qas>", broken, qa_xml("Which gene?", "HBB", "1", "Genetic mutations"));
        let g = parse_generation(&text, "d1");
        assert_eq!(g.candidates.len(), 1);
        assert_eq!(g.diagnostics[0].rule, "malformed_entry");
    }

    #[test]
    fn category_number_wins_over_label() {
        let g = parse_generation(&qa_xml("Which gene?", "HBB", "5", "Biomarkers & diagnostic tests"), "d1");
        assert_eq!(g.candidates[0].cat, "Disease causation & pathogens");
        assert_eq!(g.diagnostics[0].rule, "category_label_mismatch");
        let g = parse_generation(&qa_xml("Which gene?", "HBB", "", "Biomarkers & diagnostic tests"), "d1");
        assert_eq!(g.candidates[0].cat_num, 6);
        let g = parse_generation(&qa_xml("Which gene?", "HBB", "11", "nonsense"), "d1");
        assert!(g.candidates.is_empty());
    }

    #[test]
    fn unparseable_completion_is_not_fatal() {
        let g = parse_generation("I cannot help with that.", "d1");
        assert!(g.candidates.is_empty());
        assert_eq!(g.diagnostics[0].rule, "unparseable_completion");
    }

    #[test]
    fn list_literals() {
        assert_eq!(parse_list_literal("['a', \"Crohn's\"]").unwrap(), vec!["a", "Crohn's"]);
        assert_eq!(parse_list_literal("[]").unwrap(), Vec::<String>::new());
        assert!(parse_list_literal("HBB").is_none());
        assert!(parse_list_literal("['a' 'b']").is_none());
    }

    fn fixture(rules: &[(&[&str], &str)]) -> FixtureLlm {
        FixtureLlm::new(
            rules
                .iter()
                .map(|(c, out)| FixtureRule {
                    contains: c.iter().map(|s| s.to_string()).collect(),
                    completion: out.to_string(),
                })
                .collect(),
        )
    }

    #[test]
    fn synonyms_dedup_and_fallback() {
        let prompts = PromptSet::default();
        let llm = fixture(&[(
            &["Answer: APOC3"],
            "<synonym> apolipoprotein C-III </synonym><synonym>apoC-III</synonym><synonym> apoc3 </synonym><synonym>APOC 3</synonym>",
        )]);
        let (names, problem) = generate_synonyms("Which gene?", "APOC3", &llm, &prompts);
        assert!(problem.is_none());
        assert_eq!(names, vec!["APOC3", "apolipoprotein C-III", "apoC-III", "APOC 3"]);

        let empty = fixture(&[(&["Answer: APOC3"], "")]);
        assert_eq!(generate_synonyms("Which gene?", "APOC3", &empty, &prompts), (vec!["APOC3".to_string()], None));
        let failing = fixture(&[]);
        let (names, problem) = generate_synonyms("Which gene?", "APOC3", &failing, &prompts);
        assert_eq!(names, vec!["APOC3"]);
        assert!(problem.is_some());
    }

    #[test]
    fn paraphrase_rules() {
        let prompts = PromptSet::default();
        let original = "What congenital abnormality can cause unilateral hydrocephalus in the perinatal period?";
        let good = "Which birth defect present during the perinatal stage may result in hydrocephalus affecting only one side of the brain?";
        let llm = fixture(&[(&[original], &format!("<question> {good} </question>"))]);
        let p = paraphrase_question(original, "x", &llm, &prompts);
        assert!(p.paraphrased);
        assert_eq!(p.question, good);

        let copy = "Which abnormality can cause unilateral hydrocephalus in infants?";
        let llm = fixture(&[(&[original], &format!("<question>{copy}</question>"))]);
        let p = paraphrase_question(original, "x", &llm, &prompts);
        assert!(!p.paraphrased);
        assert_eq!(p.question, original);

        let llm = fixture(&[(&[original], &format!("<question>{original}</question>"))]);
        assert_eq!(paraphrase_question(original, "x", &llm, &prompts).rejection.as_deref(), Some("unchanged"));
    }

    #[test]
    fn filter_rules() {
        let qa = |q: &str, a: &str| CandidateQA {
            question: q.into(),
            answer: a.into(),
            aliases: vec![],
            cat_num: 1,
            cat: "Genetic mutations".into(),
            source_doc_id: "d".into(),
        };
        let (accepted, rejected) = filter_qas(
            vec![
                qa("What technology is used in This Study to map enhancers?", "ChIP-seq"),
                qa("Is Huntington's disease caused by a dominate or recessive gene?", "dominant"),
                qa("Is aspirin an NSAID?", "True"),
            ],
            &FilterConfig::default(),
        );
        assert_eq!(accepted.len(), 1);
        assert_eq!(accepted[0].answer, "dominant");
        let rules: Vec<_> = rejected.iter().map(|d| d.rule.as_str()).collect();
        assert_eq!(rules, ["document_referential", "binary_answer"]);
    }

    fn fixture_corpus() -> (CorpusStore, FixtureLlm) {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/datagen");
        (
            CorpusStore::read_jsonl(&dir.join("abstracts.jsonl")).unwrap(),
            FixtureLlm::load(&dir.join("completions.jsonl")).unwrap(),
        )
    }

    #[test]
    fn pipeline_on_fixtures() {
        let (corpus, llm) = fixture_corpus();
        let out = run_pipeline(&corpus, 10, &llm, &PipelineConfig { seed: 5, ..PipelineConfig::default() }).unwrap();
        assert_eq!(out.stats.candidates, 30);
        assert!(out.stats.candidates_per_abstract.iter().all(|(_, n)| *n == 3));
        for s in &out.dataset {
            assert!(corpus.contains(&s.source_doc_id));
            assert!(!s.question.to_lowercase().contains("this study"));
        }
        assert!(out.stats.rejections["document_referential"] >= 4);
        assert_eq!(out.stats.rejections["binary_answer"], 2);
        let apoc3 = out.dataset.iter().find(|s| s.golden_answers[0] == "APOC3").unwrap();
        assert!(apoc3.golden_answers.contains(&"apoC-III".to_string()));
        assert!(!apoc3.golden_answers.contains(&"apoc3".to_string()));
    }

    #[test]
    fn pipeline_without_paraphrasing() {
        let (corpus, llm) = fixture_corpus();
        let config = PipelineConfig { paraphrase_fraction: 0.0, ..PipelineConfig::default() };
        let out = run_pipeline(&corpus, 10, &llm, &config).unwrap();
        assert!(out.dataset.iter().all(|s| !s.paraphrased));
        assert_eq!(out.stats.paraphrase_attempted, 0);
    }

    #[test]
    fn pipeline_rejects_bad_requests() {
        let (corpus, llm) = fixture_corpus();
        assert!(matches!(
            run_pipeline(&corpus, 11, &llm, &PipelineConfig::default()),
            Err(DatagenError::TooManyAbstracts { requested: 11, available: 10 })
        ));
        let config = PipelineConfig { paraphrase_fraction: 1.5, ..PipelineConfig::default() };
        assert!(matches!(run_pipeline(&corpus, 1, &llm, &config), Err(DatagenError::BadFraction(_))));
    }

    #[test]
    fn llm_failure_skips_abstract() {
        let (corpus, _) = fixture_corpus();
        let out = run_pipeline(&corpus, 3, &FixtureLlm::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(out.stats.abstracts_failed, 3);
        assert!(out.dataset.is_empty());
    }
}
