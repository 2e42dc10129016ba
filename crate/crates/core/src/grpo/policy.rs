//! Policies over a finite action vocabulary.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Next-token distribution conditioned on a token history.
///
/// Histories may contain observation symbols that the policy never emits;
/// `log_prob` is only asked about positions holding actions.
pub trait Policy: Sync {
    fn num_actions(&self) -> usize;

    /// Log-probabilities of every action after `context`.
    fn action_log_probs(&self, context: &[u32]) -> Vec<f64>;

    /// `log pi(tokens[pos] | tokens[..pos])`.
    fn log_prob(&self, tokens: &[u32], pos: usize) -> f64 {
        let token = tokens[pos] as usize;
        if token >= self.num_actions() {
            return f64::NEG_INFINITY;
        }
        self.action_log_probs(&tokens[..pos])[token]
    }
}

/// A policy with a flat parameter vector and analytic score function.
pub trait DifferentiablePolicy: Policy + Clone {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// `grad += scale * d/dtheta log pi(tokens[pos] | tokens[..pos])`.
    fn accumulate_grad_log_prob(&self, tokens: &[u32], pos: usize, scale: f64, grad: &mut [f64]);
}

/// Sample an action index from log-probabilities.
pub fn sample_from_log_probs<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i as u32;
        }
    }
    // Rounding can leave `acc` a hair below 1.
    log_probs.iter().rposition(|lp| lp.is_finite()).unwrap_or(0) as u32
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Softmax over actions with one logit row per context bucket. The context
/// is the last `context_len` symbols (left-padded); it is encoded in base
/// `num_symbols + 1` and reduced modulo `num_buckets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSoftmaxPolicy {
    num_actions: usize,
    num_symbols: usize,
    context_len: usize,
    num_buckets: usize,
    logits: Vec<f64>,
}

impl TabularSoftmaxPolicy {
    /// Uniform policy (all logits zero).
    pub fn new(num_actions: usize, num_symbols: usize, context_len: usize, num_buckets: usize) -> Self {
        assert!(num_actions >= 1 && num_symbols >= num_actions && num_buckets >= 1);
        Self { num_actions, num_symbols, context_len, num_buckets, logits: vec![0.0; num_actions * num_buckets] }
    }

    /// One bucket per distinct padded context.
    pub fn exact(num_actions: usize, num_symbols: usize, context_len: usize) -> Self {
        let buckets = (num_symbols + 1).pow(context_len as u32);
        Self::new(num_actions, num_symbols, context_len, buckets)
    }

    pub fn randomized<R: Rng + ?Sized>(mut self, scale: f64, rng: &mut R) -> Self {
        for z in &mut self.logits {
            *z = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        self
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    pub fn bucket(&self, context: &[u32]) -> usize {
        let pad = self.num_symbols as u64;
        let base = pad + 1;
        let start = context.len().saturating_sub(self.context_len);
        let tail = &context[start..];
        let missing = self.context_len - tail.len();
        let mut code: u64 = 0;
        for sym in std::iter::repeat_n(pad, missing).chain(tail.iter().map(|&s| s as u64)) {
            code = (code * base + sym.min(pad)) % (self.num_buckets as u64 * base);
        }
        (code % self.num_buckets as u64) as usize
    }

    fn row(&self, bucket: usize) -> &[f64] {
        &self.logits[bucket * self.num_actions..(bucket + 1) * self.num_actions]
    }

    pub fn sample<R: Rng + ?Sized>(&self, context: &[u32], rng: &mut R) -> u32 {
        sample_from_log_probs(&self.action_log_probs(context), rng)
    }

    pub fn greedy(&self, context: &[u32]) -> u32 {
        let lps = self.action_log_probs(context);
        let mut best = 0;
        for (i, lp) in lps.iter().enumerate() {
            if *lp > lps[best] {
                best = i;
            }
        }
        best as u32
    }
}

impl Policy for TabularSoftmaxPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_log_probs(&self, context: &[u32]) -> Vec<f64> {
        log_softmax(self.row(self.bucket(context)))
    }
}

impl DifferentiablePolicy for TabularSoftmaxPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn accumulate_grad_log_prob(&self, tokens: &[u32], pos: usize, scale: f64, grad: &mut [f64]) {
        let bucket = self.bucket(&tokens[..pos]);
        let token = tokens[pos] as usize;
        let probs: Vec<f64> = log_softmax(self.row(bucket)).into_iter().map(f64::exp).collect();
        let off = bucket * self.num_actions;
        for (a, p) in probs.into_iter().enumerate() {
            let indicator = if a == token { 1.0 } else { 0.0 };
            grad[off + a] += scale * (indicator - p);
        }
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint has {found} parameters, shape implies {expected}")]
    Shape { found: usize, expected: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub step: u64,
    pub seed: u64,
    pub policy: TabularSoftmaxPolicy,
}

impl PolicyCheckpoint {
    pub fn new(policy: TabularSoftmaxPolicy, step: u64, seed: u64) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, step, seed, policy }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let ckpt: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(ckpt.format_version));
        }
        let p = &ckpt.policy;
        let expected = p.num_actions * p.num_buckets;
        if p.logits.len() != expected {
            return Err(CheckpointError::Shape { found: p.logits.len(), expected });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distributions_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TabularSoftmaxPolicy::new(8, 10, 3, 97).randomized(3.0, &mut rng);
        for ctx in [&[][..], &[1], &[9, 2, 3, 4], &[7, 7]] {
            let total: f64 = p.action_log_probs(ctx).iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_table_separates_contexts() {
        let p = TabularSoftmaxPolicy::exact(3, 4, 2);
        let mut seen = std::collections::HashSet::new();
        for a in 0..4u32 {
            for b in 0..4u32 {
                assert!(seen.insert(p.bucket(&[a, b])));
            }
            assert!(seen.insert(p.bucket(&[a])));
        }
        assert!(seen.insert(p.bucket(&[])));
        assert_eq!(p.bucket(&[0, 1, 2]), p.bucket(&[1, 2]));
    }

    #[test]
    fn non_action_token_has_zero_probability() {
        let p = TabularSoftmaxPolicy::new(2, 4, 1, 5);
        assert_eq!(p.log_prob(&[3], 0), f64::NEG_INFINITY);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = TabularSoftmaxPolicy::new(8, 8, 2, 81).randomized(1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| p.sample(&[1, 2], &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let p = TabularSoftmaxPolicy::new(4, 5, 2, 36).randomized(1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let ckpt = PolicyCheckpoint::new(p, 12, 7);
        ckpt.save(&path).unwrap();
        assert_eq!(PolicyCheckpoint::load(&path).unwrap(), ckpt);
    }
}
