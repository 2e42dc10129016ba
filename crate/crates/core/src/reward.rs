//! Answer normalization and the binary exact-match reward.

use serde::{Deserialize, Serialize};

use crate::corpus::QASample;
use crate::protocol::{extract_answer, Trajectory};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalization steps, applied in field order. The default is lowercase,
/// trim, whole-word article removal and whitespace collapse; punctuation is
/// kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip: bool,
    pub remove_punctuation: bool,
    pub remove_articles: bool,
    pub collapse_whitespace: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip: true,
            remove_punctuation: false,
            remove_articles: true,
            collapse_whitespace: true,
        }
    }
}

impl NormalizationConfig {
    /// SQuAD-style variant that also drops ASCII punctuation.
    pub fn squad() -> Self {
        Self { remove_punctuation: true, ..Self::default() }
    }
}

pub fn normalize_answer(text: &str, config: &NormalizationConfig) -> String {
    let mut s = if config.lowercase { text.to_lowercase() } else { text.to_string() };
    if config.strip {
        s = s.trim().to_string();
    }
    if config.remove_punctuation {
        s.retain(|c| !c.is_ascii_punctuation());
    }
    if config.remove_articles {
        s = drop_articles(&s);
    }
    if config.collapse_whitespace {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    s
}

/// Remove whitespace-delimited article words, keeping the surrounding
/// whitespace as-is.
fn drop_articles(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while !rest.is_empty() {
        let ws_len = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws_len]);
        rest = &rest[ws_len..];
        let word_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..word_len];
        if !ARTICLES.contains(&word) {
            out.push_str(word);
        }
        rest = &rest[word_len..];
    }
    out
}

/// Whether `prediction` matches any golden answer after normalization, and
/// the index of the first match.
pub fn exact_match<S: AsRef<str>>(
    prediction: &str,
    golden_answers: &[S],
    config: &NormalizationConfig,
) -> (bool, Option<usize>) {
    let pred = normalize_answer(prediction, config);
    let idx = golden_answers.iter().position(|g| normalize_answer(g.as_ref(), config) == pred);
    (idx.is_some(), idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFailure {
    NoAnswerBlock,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward: f64,
    pub matched_golden: Option<usize>,
    pub extracted: Option<String>,
    pub failure: Option<RewardFailure>,
}

impl RewardOutcome {
    pub fn grade(extracted: Option<String>, golden_answers: &[String], config: &NormalizationConfig) -> Self {
        match extracted {
            None => {
                Self { reward: 0.0, matched_golden: None, extracted: None, failure: Some(RewardFailure::NoAnswerBlock) }
            }
            Some(answer) => {
                let (_, idx) = exact_match(&answer, golden_answers, config);
                Self {
                    reward: if idx.is_some() { 1.0 } else { 0.0 },
                    matched_golden: idx,
                    extracted: Some(answer),
                    failure: idx.is_none().then_some(RewardFailure::NoMatch),
                }
            }
        }
    }

    pub fn is_correct(&self) -> bool {
        self.matched_golden.is_some()
    }
}

pub fn compute_reward(trajectory: &Trajectory, sample: &QASample, config: &NormalizationConfig) -> RewardOutcome {
    RewardOutcome::grade(extract_answer(trajectory), &sample.golden_answers, config)
}
