//! Config file schema. Every section is optional and every key defaults.
//!
//! Resolution order per value: built-in default, then the TOML file, then
//! the environment (endpoints and credentials only), then flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use litsearch::bm25::Bm25Params;
use litsearch::datagen::FilterConfig;
use litsearch::eval::{EvalConfig, EvalMode};
use litsearch::retrieval::Limits;
use litsearch::rollout::toy::ToyTrainConfig;
use litsearch::rollout::RolloutConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub endpoints: Endpoints,
    pub index: Bm25Params,
    pub serve: ServeSection,
    pub datagen: DatagenSection,
    pub policy: PolicySection,
    pub rollout: RolloutSection,
    pub train_toy: TrainToySection,
    pub eval: EvalSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    /// Base URL of a running retrieval service.
    pub retriever: Option<String>,
    /// OpenAI-compatible base URL serving the policy model.
    pub policy: Option<String>,
    /// OpenAI-compatible base URL for the data-generation model.
    pub llm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub bind: String,
    #[serde(flatten)]
    pub limits: Limits,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8000".into(), limits: Limits::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    pub n_abstracts: usize,
    pub seed: u64,
    pub paraphrase_fraction: f64,
    pub max_in_flight: usize,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Directory holding replacement prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub filter: FilterConfig,
}

impl Default for DatagenSection {
    fn default() -> Self {
        Self {
            n_abstracts: 10,
            seed: 0,
            paraphrase_fraction: 0.5,
            max_in_flight: 4,
            model: "gpt-4.1".into(),
            temperature: 0.0,
            timeout_secs: 120,
            prompts_dir: None,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// OpenAI-compatible completions endpoint.
    Http,
    /// Copies the key entity of the first retrieved document.
    Extractive,
    /// Always answers "unknown".
    Unknown,
    /// Greedy toy agent from a train-toy checkpoint.
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { kind: PolicyKind::Http, model: "policy".into(), temperature: 1.0, timeout_secs: 120, checkpoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutSection {
    pub seed: u64,
    pub group_size: usize,
    pub adv_eps: f64,
    #[serde(flatten)]
    pub engine: RolloutConfig,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { seed: 0, group_size: 5, adv_eps: 1e-6, engine: RolloutConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainToySection {
    pub seed: u64,
    pub steps: usize,
    pub env_seed: u64,
    pub planted: usize,
    pub distractors: usize,
    pub context_len: usize,
    #[serde(flatten)]
    pub train: ToyTrainConfig,
}

impl Default for TrainToySection {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 300,
            env_seed: 0,
            planted: 50,
            distractors: 150,
            context_len: 2,
            train: ToyTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub mode: Option<EvalMode>,
    pub seed: u64,
    #[serde(flatten)]
    pub harness: EvalConfig,
}
