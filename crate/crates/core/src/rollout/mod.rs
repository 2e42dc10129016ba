//! Episode orchestration: drive a policy through the tag protocol, call
//! retrieval between turns, and grade the result.
//!
//! The engine works on text. After each injection the whole trajectory text
//! is sent back to the policy as the next prompt.

mod http_policy;
pub mod toy;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use http_policy::HttpPolicyClient;

use crate::corpus::QASample;
use crate::grpo::{compute_advantages, GroupBatch, GrpoError};
use crate::http::TransportError;
use crate::protocol::{
    extract_answer_with, inject_information, loss_mask, render_prompt_with, scan_generated_with, ProtocolEvent,
    TagConfig, Terminal, Tokenizer, Trajectory,
};
use crate::retrieval::{Retriever, DEFAULT_TOPK};
use crate::reward::{NormalizationConfig, RewardOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub stop: Vec<String>,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// Generation ended on this stop sequence, which is included in the text.
    Stop(String),
    Length,
    EndOfText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: usize,
    pub finish: FinishReason,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("generation server rejected request ({status}): {message}")]
    Protocol { status: u16, message: String },
    #[error("cannot decode generation response: {0}")]
    Decode(String),
    #[error("policy failed: {0}")]
    Failed(String),
}

/// Text generation up to the first stop sequence or the token budget.
pub trait PolicyClient: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError>;
}

impl<P: PolicyClient + ?Sized> PolicyClient for &P {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        (**self).generate(request)
    }
}

impl<P: PolicyClient + ?Sized> PolicyClient for Box<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        (**self).generate(request)
    }
}

/// Cut `text` just after the earliest stop sequence. Returns the kept text
/// and the stop sequence that matched.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> (String, Option<String>) {
    let earliest = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|at| (at + s.len(), s)))
        .min_by_key(|(end, _)| *end);
    match earliest {
        Some((end, stop)) => (text[..end].to_string(), Some(stop.clone())),
        None => (text.to_string(), None),
    }
}

/// Everything the policy has seen after the rendered system prompt. The
/// prompt template is a single line, so this is the text after the first
/// newline.
pub fn prompt_history(prompt: &str) -> &str {
    prompt.split_once('\n').map_or("", |(_, rest)| rest)
}

/// Number of `<information>` blocks already injected into `prompt`.
pub fn injected_blocks(prompt: &str, tags: &TagConfig) -> usize {
    prompt_history(prompt).matches(&format!("\n</{}>", tags.information)).count()
}

type ScriptFn = dyn Fn(&GenerationRequest) -> String + Send + Sync;

/// In-process policy driven by a closure. Tokens are counted as UTF-8 bytes.
pub struct ScriptedPolicy {
    script: Box<ScriptFn>,
}

impl std::fmt::Debug for ScriptedPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScriptedPolicy")
    }
}

impl ScriptedPolicy {
    pub fn new(script: impl Fn(&GenerationRequest) -> String + Send + Sync + 'static) -> Self {
        Self { script: Box::new(script) }
    }

    /// Reply with `turns[k]` on the call that follows the k-th injected
    /// block, and with nothing once the script runs out.
    pub fn turns<S: Into<String>>(turns: impl IntoIterator<Item = S>) -> Self {
        let turns: Vec<String> = turns.into_iter().map(Into::into).collect();
        let tags = TagConfig::default();
        Self::new(move |req| turns.get(injected_blocks(&req.prompt, &tags)).cloned().unwrap_or_default())
    }

    /// Replays the generated segments of a recorded trajectory.
    pub fn replay(trajectory: &Trajectory) -> Self {
        Self::turns(
            trajectory
                .segments
                .iter()
                .filter(|s| s.origin == crate::protocol::Origin::Generated)
                .map(|s| s.text.clone()),
        )
    }
}

impl PolicyClient for ScriptedPolicy {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        let raw = (self.script)(request);
        let (mut text, stop) = truncate_at_stop(&raw, &request.stop);
        if let Some(stop) = stop {
            if text.len() <= request.max_tokens {
                let tokens = text.len();
                return Ok(Generation { text, tokens, finish: FinishReason::Stop(stop) });
            }
        }
        if text.len() > request.max_tokens {
            let mut cut = request.max_tokens;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            text.truncate(cut);
            let tokens = text.len();
            return Ok(Generation { text, tokens, finish: FinishReason::Length });
        }
        let tokens = text.len();
        Ok(Generation { text, tokens, finish: FinishReason::EndOfText })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    /// Maximum number of retrievals (injected blocks) per episode.
    pub max_turns: usize,
    pub max_tokens_per_turn: usize,
    pub max_total_tokens: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { max_turns: 4, max_tokens_per_turn: 512, max_total_tokens: 4096 }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 || self.max_tokens_per_turn == 0 || self.max_total_tokens == 0 {
            return Err(format!("episode limits must be positive, got {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub limits: EpisodeLimits,
    pub topk: usize,
    pub tags: TagConfig,
    pub normalization: NormalizationConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            limits: EpisodeLimits::default(),
            topk: DEFAULT_TOPK,
            tags: TagConfig::default(),
            normalization: NormalizationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub turn: usize,
    pub query: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub sample_id: String,
    pub trajectory: Trajectory,
    pub outcome: RewardOutcome,
    pub retrievals: Vec<RetrievalRecord>,
    pub generated_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Episode {
    pub fn terminal(&self) -> Terminal {
        self.trajectory.terminal.unwrap_or(Terminal::Malformed)
    }

    pub fn reward(&self) -> f64 {
        self.outcome.reward
    }
}

/// Seed for sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Run one episode. Failures of the policy or the retriever end the
/// episode as malformed with reward 0; they never propagate.
pub fn run_episode(
    policy: &dyn PolicyClient,
    retriever: &dyn Retriever,
    sample: &QASample,
    config: &RolloutConfig,
    seed: u64,
) -> Episode {
    let tags = &config.tags;
    let stops = tags.stop_sequences();
    let limits = &config.limits;
    let mut retrievals = Vec::new();
    let mut generated_tokens = 0usize;
    let mut error = None;

    let prompt = match render_prompt_with(&sample.question, tags) {
        Ok(p) => p,
        Err(e) => {
            let mut trajectory = Trajectory::new(&sample.question, String::new());
            trajectory.finish(Terminal::Malformed);
            return Episode {
                sample_id: sample.id.clone(),
                trajectory,
                outcome: RewardOutcome::grade(None, &sample.golden_answers, &config.normalization),
                retrievals,
                generated_tokens,
                error: Some(e.to_string()),
            };
        }
    };
    let mut trajectory = Trajectory::new(&sample.question, prompt);

    let mut call = 0u64;
    let terminal = loop {
        let remaining = limits.max_total_tokens.saturating_sub(generated_tokens);
        if remaining == 0 {
            break Terminal::LengthLimit;
        }
        let request = GenerationRequest {
            prompt: trajectory.text(),
            stop: stops.clone(),
            max_tokens: limits.max_tokens_per_turn.min(remaining),
            seed: Some(derive_seed(seed, call)),
        };
        call += 1;
        let generation = match policy.generate(&request) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("episode {}: policy error: {e}", sample.id);
                error = Some(format!("policy: {e}"));
                break Terminal::Malformed;
            }
        };
        // Enforce the stop-sequence contract whatever the client did.
        let (text, _) = truncate_at_stop(&generation.text, &stops);
        generated_tokens += generation.tokens;
        trajectory.push_generated(text.clone());

        match scan_generated_with(&text, tags) {
            ProtocolEvent::AnswerProduced(_) => break Terminal::Answered,
            ProtocolEvent::SearchRequested(query) => {
                if retrievals.len() >= limits.max_turns {
                    break Terminal::TurnLimit;
                }
                let docs = match retriever.retrieve(std::slice::from_ref(&query), config.topk) {
                    Ok(mut batch) if batch.len() == 1 => batch.pop().unwrap_or_default(),
                    Ok(batch) => {
                        error = Some(format!("retrieval: {} result lists for 1 query", batch.len()));
                        break Terminal::Malformed;
                    }
                    Err(e) => {
                        log::warn!("episode {}: retrieval error: {e}", sample.id);
                        error = Some(format!("retrieval: {e}"));
                        break Terminal::Malformed;
                    }
                };
                retrievals.push(RetrievalRecord {
                    turn: retrievals.len() + 1,
                    query,
                    doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
                });
                if let Err(e) = inject_information(&mut trajectory, &docs, tags) {
                    error = Some(format!("protocol: {e}"));
                    break Terminal::Malformed;
                }
            }
            ProtocolEvent::Incomplete => {
                break match generation.finish {
                    FinishReason::Length => Terminal::LengthLimit,
                    _ => Terminal::Malformed,
                };
            }
        }
    };
    trajectory.finish(terminal);

    // Only an answered episode is graded; anything else scores zero.
    let extracted = if terminal == Terminal::Answered { extract_answer_with(&trajectory, tags) } else { None };
    let outcome = RewardOutcome::grade(extracted, &sample.golden_answers, &config.normalization);
    Episode { sample_id: sample.id.clone(), trajectory, outcome, retrievals, generated_tokens, error }
}

/// G rollouts for one question with group-relative advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub sample_id: String,
    pub question: String,
    pub episodes: Vec<Episode>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    /// Token-level batch for the GRPO objective.
    pub fn to_batch<T: Tokenizer + ?Sized>(&self, tokenizer: &T, adv_eps: f64) -> Result<GroupBatch, GrpoError> {
        let sequences = self
            .episodes
            .iter()
            .map(|e| loss_mask(&e.trajectory, tokenizer).map_err(|_| GrpoError::EmptyMask))
            .collect::<Result<Vec<_>, _>>()?;
        GroupBatch::new(self.question.clone(), sequences, self.rewards.clone(), adv_eps)
    }
}

/// `group_size` independent episodes. Episode `i` uses sub-seed `i` of
/// `seed`; episodes run concurrently and are returned in index order.
pub fn run_group(
    policy: &dyn PolicyClient,
    retriever: &dyn Retriever,
    sample: &QASample,
    group_size: usize,
    config: &RolloutConfig,
    adv_eps: f64,
    seed: u64,
) -> Result<GroupRollout, GrpoError> {
    if group_size < 2 {
        return Err(GrpoError::GroupTooSmall(group_size));
    }
    let episodes: Vec<Episode> = (0..group_size as u64)
        .into_par_iter()
        .map(|i| run_episode(policy, retriever, sample, config, derive_seed(seed, i)))
        .collect();
    let rewards: Vec<f64> = episodes.iter().map(Episode::reward).collect();
    let advantages = compute_advantages(&rewards, adv_eps)?;
    Ok(GroupRollout { sample_id: sample.id.clone(), question: sample.question.clone(), episodes, rewards, advantages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use crate::protocol::Origin;
    use crate::retrieval::tests::fixture_engine;
    use crate::retrieval::{CountingRetriever, RetrievalError};

    fn sample(question: &str, golden: &[&str]) -> QASample {
        QASample {
            id: "q1".into(),
            question: question.into(),
            golden_answers: golden.iter().map(|s| s.to_string()).collect(),
            category: Category::GeneticMutations,
            source_doc_id: "d1".into(),
            paraphrased: false,
        }
    }

    struct Down;

    impl Retriever for Down {
        fn retrieve(&self, _: &[String], _: usize) -> Result<Vec<Vec<crate::protocol::RetrievedDoc>>, RetrievalError> {
            Err(RetrievalError::Transport(TransportError::ConnectionRefused { url: "http://127.0.0.1:9".into() }))
        }
    }

    #[test]
    fn truncation_keeps_earliest_stop() {
        let stops = vec!["</search>".to_string(), "</answer>".to_string()];
        let (t, s) = truncate_at_stop("a</answer>b</search>", &stops);
        assert_eq!(t, "a</answer>");
        assert_eq!(s.as_deref(), Some("</answer>"));
        assert_eq!(truncate_at_stop("plain", &stops), ("plain".to_string(), None));
    }

    #[test]
    fn immediate_answer_skips_retrieval() {
        let engine = CountingRetriever::new(fixture_engine());
        let policy = ScriptedPolicy::turns(["<think>known</think><answer> APOC3 </answer>"]);
        let ep = run_episode(&policy, &engine, &sample("Which gene?", &["APOC3"]), &RolloutConfig::default(), 0);
        assert_eq!(engine.calls(), 0);
        assert_eq!(ep.terminal(), Terminal::Answered);
        assert_eq!(ep.reward(), 1.0);
        assert!(ep.retrievals.is_empty());
    }

    #[test]
    fn never_answering_hits_turn_limit() {
        let engine = CountingRetriever::new(fixture_engine());
        let policy = ScriptedPolicy::new(|_| "<search> lipid </search> trailing".into());
        let config = RolloutConfig::default();
        let ep = run_episode(&policy, &engine, &sample("Which gene?", &["APOC3"]), &config, 0);
        assert_eq!(ep.terminal(), Terminal::TurnLimit);
        assert_eq!(ep.reward(), 0.0);
        assert_eq!(ep.retrievals.len(), config.limits.max_turns);
        assert_eq!(engine.calls(), config.limits.max_turns);
        assert_eq!(ep.trajectory.turns() as usize, config.limits.max_turns);
        // Text after the stop sequence never reaches the trajectory.
        assert!(!ep.trajectory.text().contains("trailing"));
    }

    #[test]
    fn transport_failure_is_a_zero_reward_episode() {
        let policy = ScriptedPolicy::turns(["<search> x </search>", "<answer> APOC3 </answer>"]);
        let ep = run_episode(&policy, &Down, &sample("Which gene?", &["APOC3"]), &RolloutConfig::default(), 0);
        assert_eq!(ep.terminal(), Terminal::Malformed);
        assert_eq!(ep.reward(), 0.0);
        assert!(ep.error.as_deref().unwrap().contains("refused"));
    }

    #[test]
    fn length_limit_without_events() {
        let policy = ScriptedPolicy::new(|_| "<think>".to_string() + &"x".repeat(100));
        let config = RolloutConfig {
            limits: EpisodeLimits { max_turns: 2, max_tokens_per_turn: 16, max_total_tokens: 64 },
            ..RolloutConfig::default()
        };
        let ep = run_episode(&policy, &fixture_engine(), &sample("Which gene?", &["APOC3"]), &config, 0);
        assert_eq!(ep.terminal(), Terminal::LengthLimit);
        assert_eq!(ep.generated_tokens, 16);
    }

    #[test]
    fn replay_reproduces_trajectory() {
        let engine = fixture_engine();
        let policy = ScriptedPolicy::turns([
            "<think>look it up</think><search> apolipoprotein </search>",
            "<think>again</think><search> triglyceride </search>",
            "<answer> APOC3 </answer>",
        ]);
        let config = RolloutConfig::default();
        let s = sample("Which gene?", &["APOC3"]);
        let first = run_episode(&policy, &engine, &s, &config, 3);
        assert_eq!(first.trajectory.turns(), 2);
        let again = run_episode(&ScriptedPolicy::replay(&first.trajectory), &engine, &s, &config, 99);
        assert_eq!(again.trajectory.to_json(), first.trajectory.to_json());
        assert!(first.trajectory.segments.iter().filter(|s| s.origin == Origin::Generated).count() == 3);
    }

    #[test]
    fn deterministic_group_has_zero_advantages() {
        let policy = ScriptedPolicy::turns(["<answer> APOC3 </answer>"]);
        let g = run_group(
            &policy,
            &fixture_engine(),
            &sample("Which gene?", &["APOC3"]),
            4,
            &RolloutConfig::default(),
            1e-6,
            7,
        )
        .unwrap();
        assert_eq!(g.episodes.len(), 4);
        assert!(g.episodes.windows(2).all(|w| w[0].trajectory == w[1].trajectory));
        assert_eq!(g.advantages, vec![0.0; 4]);
    }

    #[test]
    fn mixed_group_advantages() {
        // Rollouts 0 and 3 answer correctly; 1 and 2 do not.
        let winners: Vec<u64> = [0, 3].iter().map(|&i| derive_seed(derive_seed(11, i), 0)).collect();
        let policy = ScriptedPolicy::new(move |req| {
            if winners.contains(&req.seed.unwrap()) {
                "<answer> APOC3 </answer>".into()
            } else {
                "<answer> no </answer>".into()
            }
        });
        let s = sample("Which gene?", &["APOC3"]);
        let g = run_group(&policy, &fixture_engine(), &s, 4, &RolloutConfig::default(), 1e-6, 11).unwrap();
        assert_eq!(g.rewards, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.advantages, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn group_requires_two() {
        let policy = ScriptedPolicy::turns(["<answer> x </answer>"]);
        let err = run_group(&policy, &fixture_engine(), &sample("q?", &["x"]), 1, &RolloutConfig::default(), 1e-6, 0);
        assert!(matches!(err, Err(GrpoError::GroupTooSmall(1))));
    }
}
