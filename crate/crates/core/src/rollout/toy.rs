//! Planted-answer toy environment and GRPO training loop.
//!
//! Each question names two nonce terms that occur in exactly one planted
//! document, and that document states the answer as `key entity: X.`. The
//! agent picks from eight canned actions; reward 1 requires searching with
//! the question and then copying the entity from the top result.
//!
//! The agent is stateless: it recovers its own action history by parsing
//! the prompt, so it runs through the same [`PolicyClient`] path as an
//! external model.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{
    derive_seed, prompt_history, run_episode, run_group, EpisodeLimits, FinishReason, Generation, GenerationRequest,
    PolicyClient, PolicyError, RolloutConfig,
};
use crate::bm25::{Bm25Params, Index};
use crate::corpus::{Category, CorpusStore, Document, QASample};
use crate::grpo::{grpo_loss_and_grad, DifferentiablePolicy, GrpoConfig, GrpoError, Policy, TabularSoftmaxPolicy};
use crate::protocol::{Origin, Segment, Tokenizer};
use crate::retrieval::{Retriever, SearchEngine};

pub const NUM_ACTIONS: usize = 8;
/// Observation symbol for an injected `<information>` block.
pub const INFO: u32 = 8;
/// Observation symbol for the rendered prompt.
pub const BOS: u32 = 9;
pub const NUM_SYMBOLS: usize = 10;

const THINK: &str = "<think>I should look this up.</think>\n";
const PLAN: &str = "<think>Let me plan a search.</think>\n";
const NOISE_QUERY: &str = "review of recent studies";
const COPY_PREFIX: &str = "<think>The top document names it.</think>\n<answer> ";
const UNKNOWN: &str = "<answer> unknown </answer>";
const GUESS: &str = "<think>Answering from memory.</think>\n<answer> TP53 </answer>";
const ECHO_PREFIX: &str = "<think>Reusing the question.</think>\n<answer> ";
pub(crate) const ENTITY_MARKER: &str = "key entity: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyAction {
    Think = 0,
    SearchQuestion = 1,
    SearchNoise = 2,
    AnswerFromDocs = 3,
    AnswerUnknown = 4,
    AnswerGuess = 5,
    AnswerQuestionWord = 6,
    Plan = 7,
}

impl ToyAction {
    pub const ALL: [ToyAction; NUM_ACTIONS] = [
        ToyAction::Think,
        ToyAction::SearchQuestion,
        ToyAction::SearchNoise,
        ToyAction::AnswerFromDocs,
        ToyAction::AnswerUnknown,
        ToyAction::AnswerGuess,
        ToyAction::AnswerQuestionWord,
        ToyAction::Plan,
    ];

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u32 {
        self as u32
    }

    fn stop(self) -> Option<&'static str> {
        match self {
            ToyAction::Think | ToyAction::Plan => None,
            ToyAction::SearchQuestion | ToyAction::SearchNoise => Some("</search>"),
            _ => Some("</answer>"),
        }
    }
}

/// The question embedded in a rendered prompt.
fn question_of(prompt: &str) -> &str {
    let first_line = prompt.split('\n').next().unwrap_or("");
    first_line.find("Question: ").map_or("", |at| &first_line[at + "Question: ".len()..])
}

/// Entity stated by the first document of the last information block.
pub fn key_entity(history: &str) -> Option<String> {
    let block = &history[history.rfind("<information>")?..];
    let start = block.find(ENTITY_MARKER)? + ENTITY_MARKER.len();
    let rest = &block[start..];
    let end = rest.find('.').unwrap_or(rest.len());
    Some(rest[..end].trim().to_string()).filter(|e| !e.is_empty())
}

/// Text the agent emits for `action` given the prompt so far.
pub fn render_action(action: ToyAction, prompt: &str) -> String {
    match action {
        ToyAction::Think => THINK.to_string(),
        ToyAction::Plan => PLAN.to_string(),
        ToyAction::SearchQuestion => format!("<search> {} </search>", question_of(prompt)),
        ToyAction::SearchNoise => format!("<search> {NOISE_QUERY} </search>"),
        ToyAction::AnswerFromDocs => {
            let entity = key_entity(prompt_history(prompt)).unwrap_or_else(|| "unknown".into());
            format!("{COPY_PREFIX}{entity} </answer>")
        }
        ToyAction::AnswerUnknown => UNKNOWN.to_string(),
        ToyAction::AnswerGuess => GUESS.to_string(),
        ToyAction::AnswerQuestionWord => {
            let q = question_of(prompt);
            let word = q.split_whitespace().last().unwrap_or("").trim_end_matches('?');
            format!("{ECHO_PREFIX}{word} </answer>")
        }
    }
}

/// Parse agent output and injected blocks back into symbols.
pub fn parse_symbols(text: &str) -> Result<Vec<u32>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    let after = |rest: &str, close: &str| rest.find(close).map(|at| at + close.len());
    while !rest.is_empty() {
        let (sym, used) = if rest.starts_with("<information>") {
            (INFO, after(rest, "</information>"))
        } else if rest.starts_with(THINK) {
            (ToyAction::Think.id(), Some(THINK.len()))
        } else if rest.starts_with(PLAN) {
            (ToyAction::Plan.id(), Some(PLAN.len()))
        } else if let Some(body) = rest.strip_prefix("<search>") {
            let inner = body.split("</search>").next().unwrap_or("").trim();
            let action = if inner == NOISE_QUERY { ToyAction::SearchNoise } else { ToyAction::SearchQuestion };
            (action.id(), after(rest, "</search>"))
        } else if rest.starts_with(COPY_PREFIX) {
            (ToyAction::AnswerFromDocs.id(), after(rest, "</answer>"))
        } else if rest.starts_with(UNKNOWN) {
            (ToyAction::AnswerUnknown.id(), Some(UNKNOWN.len()))
        } else if rest.starts_with(GUESS) {
            (ToyAction::AnswerGuess.id(), Some(GUESS.len()))
        } else if rest.starts_with(ECHO_PREFIX) {
            (ToyAction::AnswerQuestionWord.id(), after(rest, "</answer>"))
        } else {
            (0, None)
        };
        let used = used.ok_or_else(|| format!("unrecognized toy text at {:?}", &rest[..rest.len().min(40)]))?;
        out.push(sym);
        rest = &rest[used..];
    }
    Ok(out)
}

/// Prompt -> BOS, injected block -> INFO, generated text -> action ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyTokenizer;

impl Tokenizer for ToyTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        parse_symbols(text).unwrap_or_default()
    }

    fn encode_segment(&self, segment: &Segment) -> Vec<u32> {
        match segment.origin {
            Origin::Prompt => vec![BOS],
            Origin::Injected => vec![INFO],
            Origin::Generated => self.encode(&segment.text),
        }
    }
}

/// A symbol-level policy exposed as a text generator. One action is one
/// token.
#[derive(Debug, Clone, Copy)]
pub struct ToyAgent<'a, P> {
    policy: &'a P,
    greedy: bool,
}

impl<'a, P: Policy> ToyAgent<'a, P> {
    pub fn new(policy: &'a P) -> Self {
        Self { policy, greedy: false }
    }

    pub fn greedy(policy: &'a P) -> Self {
        Self { policy, greedy: true }
    }
}

impl<P: Policy> PolicyClient for ToyAgent<'_, P> {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        let mut symbols = vec![BOS];
        symbols.extend(parse_symbols(prompt_history(&request.prompt)).map_err(PolicyError::Failed)?);
        let mut rng = ChaCha8Rng::seed_from_u64(request.seed.unwrap_or(0));
        let mut text = String::new();
        for n in 1..=request.max_tokens {
            let log_probs = self.policy.action_log_probs(&symbols);
            let id =
                if self.greedy { argmax(&log_probs) } else { crate::grpo::sample_from_log_probs(&log_probs, &mut rng) };
            let action =
                ToyAction::from_id(id).ok_or_else(|| PolicyError::Failed(format!("action {id} out of range")))?;
            let mut prompt = request.prompt.clone();
            prompt.push_str(&text);
            text.push_str(&render_action(action, &prompt));
            symbols.push(id);
            if let Some(stop) = action.stop() {
                return Ok(Generation { text, tokens: n, finish: FinishReason::Stop(stop.to_string()) });
            }
        }
        Ok(Generation { text, tokens: request.max_tokens, finish: FinishReason::Length })
    }
}

fn argmax(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best as u32
}

const SYLLABLES: [&str; 16] =
    ["ka", "ve", "lo", "mi", "tor", "zan", "ple", "qui", "dro", "fen", "sul", "bar", "nix", "gor", "hal", "wen"];

fn nonce_words<R: Rng>(count: usize, rng: &mut R) -> Vec<String> {
    assert!(count <= 2000, "toy environment supports at most 2000 nonce words");
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let word: String = (0..3).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    chars.next().map_or_else(String::new, |c| c.to_uppercase().chain(chars).collect())
}

/// Planted-answer corpus and its question set.
#[derive(Debug, Clone)]
pub struct PlantedEnv {
    pub corpus: CorpusStore,
    pub dataset: Vec<QASample>,
}

impl PlantedEnv {
    pub fn generate(planted: usize, distractors: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words = nonce_words(3 * (planted + distractors), &mut rng).into_iter();
        let mut next = || words.next().expect("enough nonce words");
        let mut docs = Vec::with_capacity(planted + distractors);
        let mut dataset = Vec::with_capacity(planted);
        for i in 0..planted {
            let (a, b) = (next(), next());
            let entity = format!("{}-{}", capitalize(&next()), rng.random_range(10..100));
            let id = format!("p{i:03}");
            docs.push(Document::new(
                id.clone(),
                format!("{a} signalling in {b} tissue"),
                format!(
                    "Knockdown experiments show that {a} signalling in {b} tissue depends on a single regulator. {ENTITY_MARKER}{entity}."
                ),
            ));
            dataset.push(QASample {
                id: format!("toy-{i:03}"),
                question: format!("Which regulator controls {a} signalling in {b} tissue?"),
                golden_answers: vec![entity],
                category: Category::from_number((i % 10) as u8 + 1).expect("category number in range"),
                source_doc_id: id,
                paraphrased: false,
            });
        }
        for j in 0..distractors {
            let (c, d) = (next(), next());
            let entity = format!("{}-{}", capitalize(&next()), rng.random_range(10..100));
            docs.push(Document::new(
                format!("x{j:03}"),
                format!("Review of recent studies on {c}"),
                format!("This review of recent studies covers {c} and {d}. {ENTITY_MARKER}{entity}."),
            ));
        }
        let corpus = CorpusStore::from_documents(docs).expect("generated ids are unique");
        Self { corpus, dataset }
    }

    /// The default desk-scale environment: 50 planted documents among 150
    /// distractors.
    pub fn standard(seed: u64) -> Self {
        Self::generate(50, 150, seed)
    }

    pub fn engine(&self) -> SearchEngine {
        let index = Index::from_corpus(&self.corpus, Bm25Params::default()).expect("non-empty corpus");
        SearchEngine::new(index, self.corpus.clone()).expect("index matches corpus")
    }
}

/// Exact-table policy over the toy symbols, initialized uniform.
pub fn toy_policy(context_len: usize) -> TabularSoftmaxPolicy {
    TabularSoftmaxPolicy::exact(NUM_ACTIONS, NUM_SYMBOLS, context_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub grpo: GrpoConfig,
    pub learning_rate: f64,
    pub questions_per_step: usize,
    /// Gradient steps per collected batch; the sampling policy is frozen
    /// as the old policy for all of them.
    pub updates_per_step: usize,
    pub rollout: RolloutConfig,
    /// Rollouts per question when measuring mean reward before and after.
    pub eval_rollouts: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            learning_rate: 2.0,
            questions_per_step: 4,
            updates_per_step: 2,
            rollout: RolloutConfig {
                limits: EpisodeLimits { max_turns: 4, max_tokens_per_turn: 4, max_total_tokens: 16 },
                ..RolloutConfig::default()
            },
            eval_rollouts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub steps: usize,
    pub config: ToyTrainConfig,
    pub initial_reward: f64,
    pub final_reward: f64,
    pub log: Vec<StepLog>,
}

impl TrainingReport {
    /// First step whose batch mean reward reached `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<usize> {
        self.log.iter().find(|s| s.mean_reward >= threshold).map(|s| s.step)
    }
}

/// Mean reward of the sampling agent over `dataset`, `rollouts` episodes
/// per question.
pub fn mean_reward<P: Policy>(
    policy: &P,
    dataset: &[QASample],
    retriever: &dyn Retriever,
    config: &RolloutConfig,
    rollouts: usize,
    seed: u64,
) -> f64 {
    let agent = ToyAgent::new(policy);
    let indexed: Vec<(u64, &QASample)> = dataset.iter().enumerate().map(|(i, s)| (i as u64, s)).collect();
    crate::grpo::rlvr_objective(
        &indexed,
        rollouts,
        |(i, s), k| run_episode(&agent, retriever, s, config, derive_seed(seed, i * rollouts as u64 + k as u64)),
        |_, episode| episode.reward(),
    )
}

/// GRPO on the toy agent: each step samples questions, rolls out a group
/// per question, then takes `updates_per_step` gradient-ascent steps on the
/// clipped objective with the initial policy as the KL reference.
pub fn train_toy(
    mut policy: TabularSoftmaxPolicy,
    dataset: &[QASample],
    retriever: &dyn Retriever,
    config: &ToyTrainConfig,
    steps: usize,
    seed: u64,
) -> Result<(TabularSoftmaxPolicy, TrainingReport), GrpoError> {
    config.grpo.validate()?;
    config.rollout.limits.validate().map_err(GrpoError::Config)?;
    if dataset.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let eval_seed = derive_seed(seed, u64::MAX);
    let reference = policy.clone();
    let initial_reward = mean_reward(&policy, dataset, retriever, &config.rollout, config.eval_rollouts, eval_seed);
    let mut log = Vec::with_capacity(steps);

    for step in 0..steps {
        let step_seed = derive_seed(seed, step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let picked = sample(&mut rng, dataset.len(), config.questions_per_step.min(dataset.len())).into_vec();

        let mut batches = Vec::with_capacity(picked.len());
        let mut reward_sum = 0.0;
        let mut episodes = 0usize;
        for (j, &qi) in picked.iter().enumerate() {
            let group = run_group(
                &ToyAgent::new(&policy),
                retriever,
                &dataset[qi],
                config.grpo.group_size,
                &config.rollout,
                config.grpo.adv_eps,
                derive_seed(step_seed, j as u64 + 1),
            )?;
            reward_sum += group.rewards.iter().sum::<f64>();
            episodes += group.rewards.len();
            batches.push(group.to_batch(&ToyTokenizer, config.grpo.adv_eps)?);
        }

        let old = policy.clone();
        let mut objective = f64::NAN;
        for _ in 0..config.updates_per_step {
            let (value, grad) = grpo_loss_and_grad(&batches, &policy, &old, &reference, &config.grpo)
                .map_err(|e| GrpoError::Diverged(format!("step {step}: {e}")))?;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(GrpoError::Diverged(format!("step {step}: gradient coordinate {i} is {}", grad[i])));
            }
            if objective.is_nan() {
                objective = value;
            }
            for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
                *p += config.learning_rate * g;
            }
        }
        let mean = reward_sum / episodes as f64;
        log::debug!("step {step}: mean reward {mean:.3}, objective {objective:.5}");
        log.push(StepLog { step, mean_reward: mean, objective });
    }

    let final_reward = mean_reward(&policy, dataset, retriever, &config.rollout, config.eval_rollouts, eval_seed);
    let report = TrainingReport { seed, steps, config: config.clone(), initial_reward, final_reward, log };
    Ok((policy, report))
}
