//! Accuracy evaluation in four modes. Every mode is graded by the same
//! exact-match reward used for training.
//!
//! - `direct`: question only
//! - `cot`: question plus a think-then-answer instruction
//! - `rag`: top-k documents for the raw question above the question
//! - `agent`: multi-turn search episodes
//!
//! Traces are written one JSON file per sample, named after the sample id.

mod baselines;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use baselines::{ConstantPolicy, ExtractivePolicy};

use crate::corpus::{Category, QASample};
use crate::datagen::fill_template;
use crate::protocol::{extract_answer_with, render_documents, Terminal, Trajectory};
use crate::retrieval::Retriever;
use crate::reward::RewardOutcome;
use crate::rollout::{derive_seed, run_episode, GenerationRequest, PolicyClient, RolloutConfig};

pub const DIRECT_PROMPT: &str = include_str!("../../assets/prompts/eval_direct.v1.txt");
pub const COT_PROMPT: &str = include_str!("../../assets/prompts/eval_cot.v1.txt");
pub const RAG_PROMPT: &str = include_str!("../../assets/prompts/eval_rag.v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("mode {0} needs an explicit topk")]
    MissingTopk(EvalMode),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown eval mode `{0}` (expected direct, cot, rag or agent)")]
    UnknownMode(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Direct,
    Cot,
    Rag,
    Agent,
}

impl EvalMode {
    pub fn needs_retrieval(self) -> bool {
        matches!(self, EvalMode::Rag | EvalMode::Agent)
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Direct => "direct",
            EvalMode::Cot => "cot",
            EvalMode::Rag => "rag",
            EvalMode::Agent => "agent",
        })
    }
}

impl FromStr for EvalMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(EvalMode::Direct),
            "cot" => Ok(EvalMode::Cot),
            "rag" => Ok(EvalMode::Rag),
            "agent" => Ok(EvalMode::Agent),
            _ => Err(EvalError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Documents per retrieval. Required for `rag` and `agent`.
    pub topk: Option<usize>,
    /// Generation budget for single-call modes.
    pub max_tokens: usize,
    /// Limits, tags and normalization for agent episodes; the tag and
    /// normalization settings also apply to single-call modes.
    pub rollout: RolloutConfig,
    pub max_in_flight: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { topk: None, max_tokens: 512, rollout: RolloutConfig::default(), max_in_flight: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub question: String,
    pub category: Category,
    pub paraphrased: bool,
    pub golden_answers: Vec<String>,
    pub prediction: Option<String>,
    pub reward: f64,
    pub terminal: Terminal,
    pub retrievals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub topk: Option<usize>,
    pub seed: u64,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Ordered by sample id.
    pub records: Vec<SampleRecord>,
}

pub fn render_single_prompt(mode: EvalMode, question: &str, documents: Option<&str>) -> String {
    match mode {
        EvalMode::Direct => fill_template(DIRECT_PROMPT, &[("question", question)]),
        EvalMode::Cot => fill_template(COT_PROMPT, &[("question", question)]),
        EvalMode::Rag => fill_template(RAG_PROMPT, &[("question", question), ("documents", documents.unwrap_or(""))]),
        EvalMode::Agent => unreachable!("agent prompts come from the rollout engine"),
    }
}

fn single_call(
    mode: EvalMode,
    sample: &QASample,
    policy: &dyn PolicyClient,
    retriever: &dyn Retriever,
    config: &EvalConfig,
    seed: u64,
) -> SampleRecord {
    let tags = &config.rollout.tags;
    let mut error = None;
    let mut retrievals = 0;
    let documents = if mode == EvalMode::Rag {
        let topk = config.topk.expect("checked by run_eval");
        retrievals = 1;
        match retriever.retrieve(std::slice::from_ref(&sample.question), topk) {
            Ok(mut batch) if batch.len() == 1 => Some(render_documents(&batch.remove(0))),
            Ok(batch) => {
                error = Some(format!("retrieval: {} result lists for 1 query", batch.len()));
                None
            }
            Err(e) => {
                error = Some(format!("retrieval: {e}"));
                None
            }
        }
    } else {
        None
    };

    let prompt = render_single_prompt(mode, &sample.question, documents.as_deref());
    let mut trajectory = Trajectory::new(&sample.question, prompt.clone());
    if error.is_none() {
        let request = GenerationRequest {
            prompt,
            stop: vec![format!("</{}>", tags.answer)],
            max_tokens: config.max_tokens,
            seed: Some(seed),
        };
        match policy.generate(&request) {
            Ok(generation) => trajectory.push_generated(generation.text),
            Err(e) => error = Some(format!("policy: {e}")),
        }
    }
    let prediction = if error.is_none() { extract_answer_with(&trajectory, tags) } else { None };
    trajectory.finish(if prediction.is_some() { Terminal::Answered } else { Terminal::Malformed });
    let outcome = RewardOutcome::grade(prediction, &sample.golden_answers, &config.rollout.normalization);
    record(sample, outcome, trajectory, retrievals, error)
}

fn record(
    sample: &QASample,
    outcome: RewardOutcome,
    trajectory: Trajectory,
    retrievals: usize,
    error: Option<String>,
) -> SampleRecord {
    SampleRecord {
        sample_id: sample.id.clone(),
        question: sample.question.clone(),
        category: sample.category,
        paraphrased: sample.paraphrased,
        golden_answers: sample.golden_answers.clone(),
        prediction: outcome.extracted,
        reward: outcome.reward,
        terminal: trajectory.terminal.unwrap_or(Terminal::Malformed),
        retrievals,
        error,
        trajectory,
    }
}

/// Evaluate `policy` on `dataset`. Per-sample failures score 0 and are
/// recorded; they never abort the run.
pub fn run_eval(
    mode: EvalMode,
    dataset: &[QASample],
    policy: &dyn PolicyClient,
    retriever: &dyn Retriever,
    config: &EvalConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if mode.needs_retrieval() && config.topk.is_none() {
        return Err(EvalError::MissingTopk(mode));
    }
    if config.topk == Some(0) || config.max_in_flight == 0 || config.max_tokens == 0 {
        return Err(EvalError::Config("topk, max_tokens and max_in_flight must be positive".into()));
    }
    config.rollout.limits.validate().map_err(EvalError::Config)?;

    let mut ordered: Vec<&QASample> = dataset.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rollout = config.rollout.clone();
    if let Some(k) = config.topk {
        rollout.topk = k;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let records: Vec<SampleRecord> = pool.install(|| {
        ordered
            .par_iter()
            .enumerate()
            .map(|(i, sample)| {
                let sample_seed = derive_seed(seed, i as u64);
                if mode == EvalMode::Agent {
                    let ep = run_episode(policy, retriever, sample, &rollout, sample_seed);
                    let retrievals = ep.retrievals.len();
                    record(sample, ep.outcome, ep.trajectory, retrievals, ep.error)
                } else {
                    single_call(mode, sample, policy, retriever, config, sample_seed)
                }
            })
            .collect()
    });

    let correct = records.iter().filter(|r| r.reward == 1.0).count();
    let total: f64 = records.iter().map(|r| r.reward).sum();
    let n = records.len();
    log::info!("eval {mode}: {correct}/{n} correct");
    Ok(EvalReport { mode, topk: config.topk, seed, n, correct, accuracy: total / n as f64, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKey {
    Category,
    Paraphrased,
}

impl FromStr for SplitKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "category" => Ok(SplitKey::Category),
            "paraphrased" => Ok(SplitKey::Paraphrased),
            _ => Err(format!("unknown split key `{s}` (expected category or paraphrased)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub value: String,
    pub count: usize,
    pub reward_sum: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub key: SplitKey,
    pub mode: EvalMode,
    pub topk: Option<usize>,
    pub n: usize,
    pub overall: f64,
    pub rows: Vec<SplitRow>,
}

impl SplitTable {
    /// Count-weighted mean of the row accuracies.
    pub fn reaggregate(&self) -> f64 {
        let weighted: f64 = self.rows.iter().map(|r| r.accuracy * r.count as f64).sum();
        weighted / self.n as f64
    }

    pub fn render(&self) -> String {
        let header = match self.key {
            SplitKey::Category => "category",
            SplitKey::Paraphrased => "paraphrased",
        };
        let rows: Vec<(String, String, String)> = self
            .rows
            .iter()
            .map(|r| (r.value.clone(), r.count.to_string(), format!("{:.4}", r.accuracy)))
            .chain(std::iter::once(("overall".to_string(), self.n.to_string(), format!("{:.4}", self.overall))))
            .collect();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(header.len());
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(1);
        let mut out = format!("mode={} topk={}\n", self.mode, topk_label(self.topk));
        let _ = writeln!(out, "{header:<w0$}  {:>w1$}  accuracy", "n");
        for (i, (v, c, a)) in rows.iter().enumerate() {
            if i + 1 == rows.len() {
                let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + 12));
            }
            let _ = writeln!(out, "{v:<w0$}  {c:>w1$}  {a:>8}");
        }
        out
    }
}

fn topk_label(topk: Option<usize>) -> String {
    topk.map_or_else(|| "-".to_string(), |k| k.to_string())
}

/// Accuracy per value of `key`. Rows are sorted by value.
pub fn split_report(report: &EvalReport, key: SplitKey) -> SplitTable {
    let mut groups: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in &report.records {
        let value = match key {
            SplitKey::Category => r.category.label().to_string(),
            SplitKey::Paraphrased => r.paraphrased.to_string(),
        };
        let slot = groups.entry(value).or_default();
        slot.0 += 1;
        slot.1 += r.reward;
    }
    let rows = groups
        .into_iter()
        .map(|(value, (count, reward_sum))| SplitRow { value, count, reward_sum, accuracy: reward_sum / count as f64 })
        .collect();
    SplitTable { key, mode: report.mode, topk: report.topk, n: report.n, overall: report.accuracy, rows }
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("mode={} topk={} seed={} n={}\n", self.mode, topk_label(self.topk), self.seed, self.n);
        let _ = writeln!(out, "accuracy {:.4} ({}/{})", self.accuracy, self.correct, self.n);
        let mut terminals: BTreeMap<String, usize> = BTreeMap::new();
        for r in &self.records {
            *terminals.entry(r.terminal.to_string()).or_default() += 1;
        }
        for (t, c) in terminals {
            let _ = writeln!(out, "  {t:<14}{c:>6}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let io = |source| EvalError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize)]
struct Trace<'a> {
    sample_id: &'a str,
    reward: f64,
    prediction: &'a Option<String>,
    golden_answers: &'a [String],
    terminal: Terminal,
    retrievals: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: &'a Option<String>,
    text: String,
    trajectory: &'a Trajectory,
}

fn trace_file_name(sample_id: &str) -> String {
    let safe: String = sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Write one pretty-printed trace per sample into `dir`.
pub fn dump_traces(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::with_capacity(report.records.len());
    for r in &report.records {
        let trace = Trace {
            sample_id: &r.sample_id,
            reward: r.reward,
            prediction: &r.prediction,
            golden_answers: &r.golden_answers,
            terminal: r.terminal,
            retrievals: r.retrievals,
            error: &r.error,
            text: r.trajectory.text(),
            trajectory: &r.trajectory,
        };
        let path = dir.join(trace_file_name(&r.sample_id));
        fs::write(&path, serde_json::to_string_pretty(&trace)? + "\n")
            .map_err(|source| EvalError::Io { path: path.clone(), source })?;
        paths.push(path);
    }
    Ok(paths)
}
