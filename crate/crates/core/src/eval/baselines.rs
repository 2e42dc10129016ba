use crate::rollout::toy::ENTITY_MARKER;
use crate::rollout::{Generation, GenerationRequest, PolicyClient, PolicyError, ScriptedPolicy};

const FIRST_DOC: &str = "Doc 1 (Title: ";

/// Reads the answer off the first retrieved document. When no documents are
/// in context it searches with the question if searching is allowed, and
/// otherwise answers "unknown".
///
/// The answer is the text after `key entity: ` in the first document, or
/// that document's title when there is no marker.
pub struct ExtractivePolicy {
    inner: ScriptedPolicy,
}

impl Default for ExtractivePolicy {
    fn default() -> Self {
        Self { inner: ScriptedPolicy::new(extractive_reply) }
    }
}

fn first_doc_answer(prompt: &str) -> Option<String> {
    let doc = &prompt[prompt.rfind(FIRST_DOC)? + FIRST_DOC.len()..];
    let line = doc.split('\n').next().unwrap_or("");
    let answer = match line.find(ENTITY_MARKER) {
        Some(at) => {
            let rest = &line[at + ENTITY_MARKER.len()..];
            &rest[..rest.find('.').unwrap_or(rest.len())]
        }
        None => &line[..line.find(')').unwrap_or(line.len())],
    };
    Some(answer.trim().to_string()).filter(|a| !a.is_empty())
}

fn extractive_reply(request: &GenerationRequest) -> String {
    if let Some(answer) = first_doc_answer(&request.prompt) {
        return format!("<answer> {answer} </answer>");
    }
    if request.stop.iter().any(|s| s == "</search>") {
        if let Some(at) = request.prompt.rfind("Question: ") {
            let question = request.prompt[at + "Question: ".len()..].split('\n').next().unwrap_or("");
            return format!("<search> {} </search>", question.trim());
        }
    }
    "<answer> unknown </answer>".to_string()
}

impl PolicyClient for ExtractivePolicy {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        self.inner.generate(request)
    }
}

/// Always answers the same string, without searching.
pub struct ConstantPolicy {
    inner: ScriptedPolicy,
}

impl ConstantPolicy {
    pub fn new(answer: impl Into<String>) -> Self {
        let reply = format!("<answer> {} </answer>", answer.into());
        Self { inner: ScriptedPolicy::new(move |_| reply.clone()) }
    }
}

impl PolicyClient for ConstantPolicy {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation, PolicyError> {
        self.inner.generate(request)
    }
}
