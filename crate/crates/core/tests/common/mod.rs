//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library code paths it checks.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

/// Lowercase runs of alphanumeric characters.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Exhaustive Okapi BM25: every query term is scored against every
/// document from raw counts.
pub struct Bm25Oracle {
    docs: Vec<(String, Vec<String>)>,
    k1: f64,
    b: f64,
}

impl Bm25Oracle {
    pub fn new(docs: &[(String, String)], k1: f64, b: f64) -> Self {
        Self { docs: docs.iter().map(|(id, text)| (id.clone(), oracle_tokens(text))).collect(), k1, b }
    }

    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / n;
        let df: Vec<f64> = query.iter().map(|t| self.docs.iter().filter(|d| d.1.contains(t)).count() as f64).collect();
        self.score_with(query, &df, avgdl, doc)
    }

    fn score_with(&self, query: &[String], df: &[f64], avgdl: f64, doc: usize) -> f64 {
        let n = self.docs.len() as f64;
        let dl = self.docs[doc].1.len() as f64;
        let mut total = 0.0;
        for (term, &df) in query.iter().zip(df) {
            let tf = self.docs[doc].1.iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            total += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl));
        }
        total
    }

    /// Every document sharing a term with the query, best first, ties by
    /// ascending id.
    pub fn rank(&self, query: &str) -> Vec<(String, f64)> {
        let q = oracle_tokens(query);
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(|d| d.1.len() as f64).sum::<f64>() / n;
        let df: Vec<f64> = q.iter().map(|t| self.docs.iter().filter(|d| d.1.contains(t)).count() as f64).collect();
        let mut scored: Vec<(String, f64)> = (0..self.docs.len())
            .filter(|&i| q.iter().any(|t| self.docs[i].1.contains(t)))
            .map(|i| (self.docs[i].0.clone(), self.score_with(&q, &df, avgdl, i)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Compare a top-k list with the oracle's full ranking. Oracle scores
/// within `rel_tol` of each other form one tie class, and inside a class
/// any order is accepted.
pub fn check_ranking(got: &[(String, f64)], oracle: &[(String, f64)], k: usize, rel_tol: f64) -> Result<(), String> {
    let expected_len = oracle.len().min(k);
    if got.len() != expected_len {
        return Err(format!("{} hits, oracle expects {expected_len}", got.len()));
    }
    let mut class = vec![0usize; oracle.len()];
    for i in 1..oracle.len() {
        class[i] = if rel_diff(oracle[i].1, oracle[i - 1].1) <= rel_tol { class[i - 1] } else { class[i - 1] + 1 };
    }
    let position: HashMap<&str, usize> = oracle.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    for (rank, (id, score)) in got.iter().enumerate() {
        let Some(&at) = position.get(id.as_str()) else {
            return Err(format!("rank {rank}: `{id}` not in oracle ranking"));
        };
        if class[at] != class[rank] {
            return Err(format!("rank {rank}: `{id}` belongs at oracle rank {at}"));
        }
        if rel_diff(*score, oracle[at].1) > rel_tol {
            return Err(format!("rank {rank}: score {score} vs oracle {}", oracle[at].1));
        }
    }
    Ok(())
}

/// Random corpus of `n` documents with at most `max_len` tokens drawn
/// from a Zipf-ish vocabulary of `vocab` words.
pub fn random_corpus<R: Rng>(rng: &mut R, n: usize, max_len: usize, vocab: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            let words: Vec<String> = (0..len).map(|_| random_word(rng, vocab)).collect();
            (format!("doc{i:05}"), words.join(if rng.random_bool(0.2) { ", " } else { " " }))
        })
        .collect()
}

pub fn random_word<R: Rng>(rng: &mut R, vocab: usize) -> String {
    let u: f64 = rng.random();
    let w = ((vocab as f64).powf(u) as usize).min(vocab - 1);
    if rng.random_bool(0.1) {
        format!("W{w}")
    } else {
        format!("w{w}")
    }
}

pub fn random_query<R: Rng>(rng: &mut R, vocab: usize) -> String {
    let len = rng.random_range(1..=4);
    (0..len).map(|_| random_word(rng, vocab + vocab / 4)).collect::<Vec<_>>().join(" ")
}

/// Lowercase, drop the words `a`, `an` and `the`, and single-space the
/// remaining words.
pub fn oracle_normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let kept: Vec<&str> = lower.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).collect();
    kept.join(" ")
}

pub fn oracle_grade(prediction: &str, golden: &[String]) -> f64 {
    let p = oracle_normalize(prediction);
    if golden.iter().any(|g| oracle_normalize(g) == p) {
        1.0
    } else {
        0.0
    }
}

pub fn apoc3_family() -> Vec<String> {
    ["APOC3", "apolipoprotein C-III", "apoC-III", "apoCIII", "apolipoprotein C3"].map(String::from).to_vec()
}

/// Word 3-grams over lowercase alphanumeric tokens.
pub fn oracle_trigrams(text: &str) -> Vec<Vec<String>> {
    oracle_tokens(text).windows(3).map(|w| w.to_vec()).collect()
}

pub fn shares_trigram(a: &str, b: &str) -> bool {
    let ta = oracle_trigrams(a);
    oracle_trigrams(b).iter().any(|g| ta.contains(g))
}
