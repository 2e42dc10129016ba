//! Group Relative Policy Optimization.
//!
//! For each question a group of G trajectories is sampled from the old
//! policy. Rewards are normalized within the group,
//!
//! ```text
//! A_i = (r_i - mean(r)) / std(r)        (population std; 0 when std < adv_eps)
//! ```
//!
//! and the objective to maximize is
//!
//! ```text
//! J = mean_groups mean_i [ (1 / sum_t m_it) * sum_{t: m_it = 1} min(rho_it A_i, clip(rho_it, 1 - eps, 1 + eps) A_i)
//!                           - beta * KL_i ]
//! rho_it = pi_new(y_it | y_i<t) / pi_old(y_it | y_i<t)
//! KL_i   = mean_{t: m_it = 1} (q - ln q - 1),  q = pi_ref(y_it | .) / pi_new(y_it | .)
//! ```
//!
//! where `m_it` is the loss mask: only generated tokens participate.

mod gradcheck;
mod policy;

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use policy::{
    sample_from_log_probs, CheckpointError, DifferentiablePolicy, Policy, PolicyCheckpoint, TabularSoftmaxPolicy,
    CHECKPOINT_FORMAT_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::protocol::MaskedTokens;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GrpoError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid GRPO config: {0}")]
    Config(String),
    #[error("no groups to optimize")]
    EmptyBatch,
    #[error("group `{question}`: {reason}")]
    BadGroup { question: String, reason: String },
    #[error("non-finite log-probability at position {position} ({which} policy)")]
    NonFinite { position: usize, which: &'static str },
    #[error("sequence has no loss-bearing tokens")]
    EmptyMask,
    #[error("objective diverged: {0}")]
    Diverged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coeff: f64,
    pub adv_eps: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { group_size: 8, clip_eps: 0.2, kl_coeff: 1e-3, adv_eps: 1e-6 }
    }
}

impl GrpoConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN as well
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::Config(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(GrpoError::Config(format!("clip_eps must be > 0, got {}", self.clip_eps)));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return Err(GrpoError::Config(format!("kl_coeff must be >= 0, got {}", self.kl_coeff)));
        }
        if !(self.adv_eps > 0.0) {
            return Err(GrpoError::Config(format!("adv_eps must be > 0, got {}", self.adv_eps)));
        }
        Ok(())
    }
}

/// Group-normalized advantages.
pub fn compute_advantages(rewards: &[f64], adv_eps: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < adv_eps {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// G sampled trajectories for one question, at token level.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub question: String,
    pub sequences: Vec<MaskedTokens>,
    pub rewards: Vec<f64>,
    /// One scalar per trajectory, broadcast over its masked tokens.
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn new(
        question: impl Into<String>,
        sequences: Vec<MaskedTokens>,
        rewards: Vec<f64>,
        adv_eps: f64,
    ) -> Result<Self, GrpoError> {
        let question = question.into();
        if sequences.len() != rewards.len() {
            return Err(GrpoError::BadGroup {
                question,
                reason: format!("{} sequences but {} rewards", sequences.len(), rewards.len()),
            });
        }
        let advantages = compute_advantages(&rewards, adv_eps)?;
        Ok(Self { question, sequences, rewards, advantages })
    }

    fn check(&self) -> Result<(), GrpoError> {
        let bad = |reason: String| GrpoError::BadGroup { question: self.question.clone(), reason };
        let g = self.sequences.len();
        if g == 0 || self.rewards.len() != g || self.advantages.len() != g {
            return Err(bad("sequences, rewards and advantages must have equal nonzero length".into()));
        }
        for seq in &self.sequences {
            if seq.tokens.len() != seq.mask.len() {
                return Err(bad("token and mask lengths differ".into()));
            }
            if !seq.mask.contains(&1) {
                return Err(GrpoError::EmptyMask);
            }
        }
        Ok(())
    }
}

fn masked_positions(seq: &MaskedTokens) -> impl Iterator<Item = usize> + '_ {
    seq.mask.iter().enumerate().filter(|(_, &m)| m == 1).map(|(t, _)| t)
}

fn checked_log_prob<P: Policy + ?Sized>(
    policy: &P,
    tokens: &[u32],
    pos: usize,
    which: &'static str,
) -> Result<f64, GrpoError> {
    let lp = policy.log_prob(tokens, pos);
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(GrpoError::NonFinite { position: pos, which })
    }
}

/// Probability ratios new/old at every masked-in position, as
/// `(position, ratio)`.
pub fn token_ratios<N: Policy + ?Sized, O: Policy + ?Sized>(
    policy_new: &N,
    policy_old: &O,
    seq: &MaskedTokens,
) -> Result<Vec<(usize, f64)>, GrpoError> {
    if !seq.mask.contains(&1) {
        return Err(GrpoError::EmptyMask);
    }
    masked_positions(seq)
        .map(|t| {
            let new = checked_log_prob(policy_new, &seq.tokens, t, "new")?;
            let old = checked_log_prob(policy_old, &seq.tokens, t, "old")?;
            Ok((t, (new - old).exp()))
        })
        .collect()
}

/// `q - ln q - 1` with `ln q = lp_ref - lp_new`.
fn k3(lp_new: f64, lp_ref: f64) -> f64 {
    let log_q = lp_ref - lp_new;
    log_q.exp() - log_q - 1.0
}

/// Mean per-token k3 estimate of KL(new || ref) over masked positions.
pub fn kl_penalty<N: Policy + ?Sized, R: Policy + ?Sized>(
    policy_new: &N,
    policy_ref: &R,
    seq: &MaskedTokens,
) -> Result<f64, GrpoError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in masked_positions(seq) {
        let new = checked_log_prob(policy_new, &seq.tokens, t, "new")?;
        let reference = checked_log_prob(policy_ref, &seq.tokens, t, "reference")?;
        total += k3(new, reference);
        n += 1;
    }
    if n == 0 {
        return Err(GrpoError::EmptyMask);
    }
    Ok(total / n as f64)
}

/// Per-token clipped surrogate `min(rho A, clip(rho) A)` and its derivative
/// with respect to `ln pi_new`.
fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Walk every masked token once, returning J and reporting
/// `dJ / d ln pi_new` per token through `on_token`.
fn evaluate<N, O, R, F>(
    batches: &[GroupBatch],
    policy_new: &N,
    policy_old: &O,
    policy_ref: &R,
    config: &GrpoConfig,
    mut on_token: F,
) -> Result<f64, GrpoError>
where
    N: Policy + ?Sized,
    O: Policy + ?Sized,
    R: Policy + ?Sized,
    F: FnMut(&[u32], usize, f64),
{
    config.validate()?;
    if batches.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    for b in batches {
        b.check()?;
    }
    let group_weight = 1.0 / batches.len() as f64;
    let mut objective = 0.0;
    for batch in batches {
        let traj_weight = group_weight / batch.sequences.len() as f64;
        for (seq, &adv) in batch.sequences.iter().zip(&batch.advantages) {
            let positions: Vec<usize> = masked_positions(seq).collect();
            let w = traj_weight / positions.len() as f64;
            let mut surrogate = 0.0;
            let mut kl = 0.0;
            for &t in &positions {
                let lp_new = checked_log_prob(policy_new, &seq.tokens, t, "new")?;
                let lp_old = checked_log_prob(policy_old, &seq.tokens, t, "old")?;
                let (value, d_surrogate) = clipped_surrogate((lp_new - lp_old).exp(), adv, config.clip_eps);
                surrogate += value;
                let mut coeff = d_surrogate;
                if config.kl_coeff > 0.0 {
                    let lp_ref = checked_log_prob(policy_ref, &seq.tokens, t, "reference")?;
                    kl += k3(lp_new, lp_ref);
                    // d(q - ln q - 1)/d ln pi_new = 1 - q
                    coeff -= config.kl_coeff * (1.0 - (lp_ref - lp_new).exp());
                }
                on_token(&seq.tokens, t, w * coeff);
            }
            objective += w * (surrogate - config.kl_coeff * kl);
        }
    }
    if !objective.is_finite() {
        return Err(GrpoError::Diverged(format!("objective is {objective}")));
    }
    Ok(objective)
}

/// GRPO objective (to maximize).
pub fn grpo_loss<N, O, R>(
    batches: &[GroupBatch],
    policy_new: &N,
    policy_old: &O,
    policy_ref: &R,
    config: &GrpoConfig,
) -> Result<f64, GrpoError>
where
    N: Policy + ?Sized,
    O: Policy + ?Sized,
    R: Policy + ?Sized,
{
    evaluate(batches, policy_new, policy_old, policy_ref, config, |_, _, _| {})
}

/// GRPO objective and its analytic gradient with respect to the new
/// policy's parameters.
pub fn grpo_loss_and_grad<N, O, R>(
    batches: &[GroupBatch],
    policy_new: &N,
    policy_old: &O,
    policy_ref: &R,
    config: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError>
where
    N: DifferentiablePolicy,
    O: Policy + ?Sized,
    R: Policy + ?Sized,
{
    let mut grad = vec![0.0; policy_new.params().len()];
    let value = evaluate(batches, policy_new, policy_old, policy_ref, config, |tokens, t, coeff| {
        if coeff != 0.0 {
            policy_new.accumulate_grad_log_prob(tokens, t, coeff, &mut grad);
        }
    })?;
    Ok((value, grad))
}

/// Monte Carlo estimate of the expected verifier reward: the mean of
/// `reward_fn` over `samples_per_question` draws from `policy` for every
/// item in `dataset`.
pub fn rlvr_objective<S, Y, P, F>(dataset: &[S], samples_per_question: usize, mut policy: P, reward_fn: F) -> f64
where
    P: FnMut(&S, usize) -> Y,
    F: Fn(&S, &Y) -> f64,
{
    if dataset.is_empty() || samples_per_question == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for item in dataset {
        for k in 0..samples_per_question {
            let y = policy(item, k);
            total += reward_fn(item, &y);
        }
    }
    total / (dataset.len() * samples_per_question) as f64
}
