//! Search-agent tag protocol.
//!
//! An episode is a sequence of segments: the rendered prompt, text the
//! policy generated, and `<information>` blocks injected after each search.
//! Only generated segments carry loss.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bm25::Hit;

/// System prompt used for agent rollouts. `{question}` is substituted.
pub const SYSTEM_PROMPT_TEMPLATE: &str = "Answer the given question. You must conduct reasoning inside <think> and </think> first every time you get new information. After reasoning, if you find you lack some knowledge, you can call a search engine by <search> query </search> and it will return the top searched results between <information> and </information>. You can search as many times as your want. If you find no further external knowledge needed, you can directly provide the answer inside <answer> and </answer>, without detailed illustrations. For example, <answer> Beijing </answer>. Question: {question}\n";

/// Injected in place of an empty result list.
pub const NO_RESULTS_SENTINEL: &str = "No results found.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("cannot inject information into a trajectory that already ended ({0})")]
    Terminated(Terminal),
    #[error("information can only follow a generated segment")]
    InjectionOutOfOrder,
    #[error("trajectory has no loss-bearing tokens")]
    EmptyMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagConfig {
    pub search: String,
    pub answer: String,
    pub information: String,
}

impl Default for TagConfig {
    fn default() -> Self {
        Self { search: "search".into(), answer: "answer".into(), information: "information".into() }
    }
}

impl TagConfig {
    fn open(name: &str) -> String {
        format!("<{name}>")
    }

    fn close(name: &str) -> String {
        format!("</{name}>")
    }

    /// Stop sequences handed to the policy during rollouts.
    pub fn stop_sequences(&self) -> Vec<String> {
        vec![Self::close(&self.search), Self::close(&self.answer)]
    }
}

pub fn render_prompt(question: &str) -> Result<String, ProtocolError> {
    render_prompt_with(question, &TagConfig::default())
}

pub fn render_prompt_with(question: &str, tags: &TagConfig) -> Result<String, ProtocolError> {
    if question.trim().is_empty() {
        return Err(ProtocolError::EmptyQuestion);
    }
    let mut prompt = SYSTEM_PROMPT_TEMPLATE.to_string();
    if tags.search != "search" {
        prompt = prompt
            .replace("<search>", &TagConfig::open(&tags.search))
            .replace("</search>", &TagConfig::close(&tags.search));
    }
    if tags.answer != "answer" {
        prompt = prompt
            .replace("<answer>", &TagConfig::open(&tags.answer))
            .replace("</answer>", &TagConfig::close(&tags.answer));
    }
    if tags.information != "information" {
        prompt = prompt
            .replace("<information>", &TagConfig::open(&tags.information))
            .replace("</information>", &TagConfig::close(&tags.information));
    }
    Ok(prompt.replace("{question}", question))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolEvent {
    SearchRequested(String),
    AnswerProduced(String),
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Search,
    Answer,
}

/// Scan text generated since the last event. The block whose closing tag
/// appears first decides the event; a block whose body opens another
/// protocol tag is treated as malformed and yields `Incomplete`.
pub fn scan_generated(text: &str) -> ProtocolEvent {
    scan_generated_with(text, &TagConfig::default())
}

pub fn scan_generated_with(text: &str, tags: &TagConfig) -> ProtocolEvent {
    let candidates =
        [(BlockKind::Search, first_block(text, &tags.search)), (BlockKind::Answer, first_block(text, &tags.answer))];
    let first = candidates
        .into_iter()
        .filter_map(|(kind, found)| found.map(|(end, inner)| (end, kind, inner)))
        .min_by_key(|(end, _, _)| *end);
    let Some((_, kind, inner)) = first else {
        return ProtocolEvent::Incomplete;
    };
    let nested = [&tags.search, &tags.answer, &tags.information].iter().any(|t| inner.contains(&TagConfig::open(t)));
    if nested {
        return ProtocolEvent::Incomplete;
    }
    let inner = inner.trim().to_string();
    match kind {
        BlockKind::Search => ProtocolEvent::SearchRequested(inner),
        BlockKind::Answer => ProtocolEvent::AnswerProduced(inner),
    }
}

/// First `<tag>...</tag>` in `text`: (byte offset just past the close tag,
/// inner text between the last open tag before the close and the close).
fn first_block<'a>(text: &'a str, tag: &str) -> Option<(usize, &'a str)> {
    let open = TagConfig::open(tag);
    let close = TagConfig::close(tag);
    let close_at = text.find(&close)?;
    let open_at = text[..close_at].find(&open)?;
    Some((close_at + close.len(), &text[open_at + open.len()..close_at]))
}

/// True when `text` has an opened protocol block that never closed.
pub fn has_unclosed_block(text: &str, tags: &TagConfig) -> bool {
    [&tags.search, &tags.answer].iter().any(|t| {
        let opens = text.matches(&TagConfig::open(t)).count();
        let closes = text.matches(&TagConfig::close(t)).count();
        opens > closes
    })
}

/// Incremental scanner; the first event it reports equals
/// `scan_generated` over the concatenation of all chunks seen so far.
#[derive(Debug, Clone, Default)]
pub struct ChunkScanner {
    buffer: String,
    tags: TagConfig,
}

impl ChunkScanner {
    pub fn new(tags: TagConfig) -> Self {
        Self { buffer: String::new(), tags }
    }

    pub fn push(&mut self, chunk: &str) -> ProtocolEvent {
        self.buffer.push_str(chunk);
        scan_generated_with(&self.buffer, &self.tags)
    }

    pub fn text(&self) -> &str {
        &self.buffer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Prompt,
    Generated,
    Injected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub origin: Origin,
    pub turn: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Answered,
    TurnLimit,
    LengthLimit,
    Malformed,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::Answered => "answered",
            Terminal::TurnLimit => "turn_limit",
            Terminal::LengthLimit => "length_limit",
            Terminal::Malformed => "malformed",
        })
    }
}

/// A document as rendered into the agent's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub id: String,
    pub contents: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl RetrievedDoc {
    pub fn from_hit(hit: &Hit, contents: String) -> Self {
        Self { id: hit.id.clone(), contents, score: Some(hit.score) }
    }

    fn title_and_body(&self) -> (&str, &str) {
        self.contents.split_once('\n').unwrap_or(("", self.contents.as_str()))
    }
}

/// `Doc i (Title: ...) body` lines, one per document, 1-based.
pub fn render_documents(docs: &[RetrievedDoc]) -> String {
    if docs.is_empty() {
        return NO_RESULTS_SENTINEL.to_string();
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let (title, body) = d.title_and_body();
            format!("Doc {} (Title: {}) {}", i + 1, title, body)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: String,
    pub segments: Vec<Segment>,
    pub terminal: Option<Terminal>,
}

impl Trajectory {
    pub fn new(question: &str, prompt: String) -> Self {
        Self {
            question: question.to_string(),
            segments: vec![Segment { text: prompt, origin: Origin::Prompt, turn: 0 }],
            terminal: None,
        }
    }

    /// Start a trajectory with the default rendered system prompt.
    pub fn start(question: &str) -> Result<Self, ProtocolError> {
        Ok(Self::new(question, render_prompt(question)?))
    }

    /// Number of `<information>` blocks injected so far.
    pub fn turns(&self) -> u32 {
        self.segments.iter().filter(|s| s.origin == Origin::Injected).count() as u32
    }

    pub fn push_generated(&mut self, text: impl Into<String>) {
        let turn = self.turns();
        self.segments.push(Segment { text: text.into(), origin: Origin::Generated, turn });
    }

    /// Full text: prompt plus everything appended since.
    pub fn text(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn generated_text(&self) -> String {
        self.segments.iter().filter(|s| s.origin == Origin::Generated).map(|s| s.text.as_str()).collect()
    }

    pub fn finish(&mut self, terminal: Terminal) {
        self.terminal = Some(terminal);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }
}

pub fn information_block(docs: &[RetrievedDoc], tags: &TagConfig) -> String {
    format!(
        "{}\n{}\n{}",
        TagConfig::open(&tags.information),
        render_documents(docs),
        TagConfig::close(&tags.information)
    )
}

/// Append retrieved documents as a new injected segment.
pub fn inject_information(
    trajectory: &mut Trajectory,
    docs: &[RetrievedDoc],
    tags: &TagConfig,
) -> Result<(), ProtocolError> {
    if let Some(t) = trajectory.terminal {
        return Err(ProtocolError::Terminated(t));
    }
    if trajectory.segments.last().map(|s| s.origin) != Some(Origin::Generated) {
        return Err(ProtocolError::InjectionOutOfOrder);
    }
    let turn = trajectory.turns() + 1;
    trajectory.segments.push(Segment { text: information_block(docs, tags), origin: Origin::Injected, turn });
    Ok(())
}

/// Token-level view of a segment sequence.
pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;

    /// Encode one trajectory segment. Tokenizers that represent prompts or
    /// observations specially override this.
    fn encode_segment(&self, segment: &Segment) -> Vec<u32> {
        self.encode(&segment.text)
    }
}

/// One token per UTF-8 byte. Decoding a run of tokens is exact.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }
}

impl ByteTokenizer {
    pub fn decode(tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens.iter().map(|&t| t as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTokens {
    pub tokens: Vec<u32>,
    /// 1 on generated tokens, 0 on prompt and injected tokens.
    pub mask: Vec<u8>,
}

pub fn loss_mask<T: Tokenizer + ?Sized>(trajectory: &Trajectory, tokenizer: &T) -> Result<MaskedTokens, ProtocolError> {
    let mut tokens = Vec::new();
    let mut mask = Vec::new();
    for seg in &trajectory.segments {
        let ids = tokenizer.encode_segment(seg);
        let m = u8::from(seg.origin == Origin::Generated);
        mask.extend(std::iter::repeat_n(m, ids.len()));
        tokens.extend(ids);
    }
    if !mask.contains(&1) {
        return Err(ProtocolError::EmptyMask);
    }
    Ok(MaskedTokens { tokens, mask })
}

/// Last `<answer>` block in generated segments, trimmed. Answers inside
/// injected documents are ignored.
pub fn extract_answer(trajectory: &Trajectory) -> Option<String> {
    extract_answer_with(trajectory, &TagConfig::default())
}

pub fn extract_answer_with(trajectory: &Trajectory, tags: &TagConfig) -> Option<String> {
    trajectory
        .segments
        .iter()
        .filter(|s| s.origin == Origin::Generated)
        .filter_map(|s| last_block(&s.text, &tags.answer))
        .next_back()
        .map(|s| s.trim().to_string())
}

/// Last complete block of `tag` in `text`.
pub fn last_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = TagConfig::open(tag);
    let close = TagConfig::close(tag);
    let close_at = text.rfind(&close)?;
    let open_at = text[..close_at].rfind(&open)?;
    Some(&text[open_at + open.len()..close_at])
}
