//! Deliberation loop: a backend LLM emits Thought/Action turns in a
//! line-oriented grammar, the loop dispatches registered tools and feeds
//! Observations back, and the session ends on a final answer, the iteration
//! limit, or a backend failure.
//!
//! Tool failures never abort a session; they come back to the model as
//! observations prefixed "ERROR:" so it can recover or give up explicitly.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend protocol failure: {0}")]
    Protocol(String),
    #[error("backend rate-limited (retry-after: {retry_after:?} s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("scripted backend exhausted after {0} turns")]
    ScriptExhausted(usize),
    #[error("invalid agent setup: {0}")]
    Config(String),
}

/// A tool's own failure report, surfaced to the model as an observation.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ToolError(pub String);

/// Milliseconds elapsed since some fixed origin. Sessions driven by a mock
/// backend use a constant clock so transcripts are byte-stable.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// One chat turn on the backend wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Completion source. Implementations: a remote HTTP chat endpoint and a
/// scripted mock keyed by turn index.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, temperature: f64, messages: &[ChatMessage]) -> Result<String, AgentError>;
}

/// What a tool looks like to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: String,
}

pub type ToolHandler = Arc<dyn Fn(&str) -> Result<String, ToolError> + Send + Sync>;

/// Named tools available to one session.
#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: Vec<(ToolSpec, ToolHandler)>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), AgentError> {
        if spec.name.trim().is_empty() {
            return Err(AgentError::Config("tool name cannot be empty".into()));
        }
        if spec.description.trim().is_empty() {
            return Err(AgentError::Config(format!(
                "tool {:?} needs a description",
                spec.name
            )));
        }
        if self.tools.iter().any(|(s, _)| s.name == spec.name) {
            return Err(AgentError::Config(format!(
                "tool {:?} registered twice",
                spec.name
            )));
        }
        self.tools.push((spec, handler));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolHandler> {
        self.tools
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(_, h)| h)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().map(|(s, _)| s)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|(s, _)| s.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

/// Replays a fixed list of completions. `new` fails hard when the script
/// runs out; `cycling` wraps around, which is how infinite-loop behavior is
/// simulated in tests.
pub struct ScriptedBackend {
    turns: Vec<String>,
    cursor: AtomicUsize,
    cycle: bool,
}

impl ScriptedBackend {
    pub fn new<I, S>(turns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            turns: turns.into_iter().map(Into::into).collect(),
            cursor: AtomicUsize::new(0),
            cycle: false,
        }
    }

    pub fn cycling<I, S>(turns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut backend = Self::new(turns);
        backend.cycle = true;
        backend
    }

    /// Backend calls served so far.
    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _temperature: f64, _messages: &[ChatMessage]) -> Result<String, AgentError> {
        let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
        if self.turns.is_empty() {
            return Err(AgentError::ScriptExhausted(idx));
        }
        if idx >= self.turns.len() && !self.cycle {
            return Err(AgentError::ScriptExhausted(idx));
        }
        Ok(self.turns[idx % self.turns.len()].clone())
    }
}

/// Remote chat endpoint speaking
/// `POST {model, temperature, messages[]} -> {text}`.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        HttpBackend {
            url: url.into(),
            api_key,
            model: model.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Endpoint from `EXTRACTOR_LLM_URL`, key from `EXTRACTOR_LLM_KEY`
    /// (optional).
    pub fn from_env(model: impl Into<String>) -> Result<Self, AgentError> {
        let url = std::env::var("EXTRACTOR_LLM_URL")
            .map_err(|_| AgentError::Config("EXTRACTOR_LLM_URL is not set".into()))?;
        let api_key = std::env::var("EXTRACTOR_LLM_KEY").ok();
        Ok(Self::new(url, model, api_key))
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl LlmBackend for HttpBackend {
    fn complete(&self, temperature: f64, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let payload = serde_json::json!({
            "model": self.model,
            "temperature": temperature,
            "messages": messages,
        });
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&payload)
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|s| s.trim().parse().ok());
            return Err(AgentError::RateLimited { retry_after });
        }
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(AgentError::Protocol(format!(
                "status {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        let parsed: CompletionResponse = serde_json::from_str(&body)
            .map_err(|e| AgentError::Protocol(format!("unparseable completion body: {e}")))?;
        Ok(parsed.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Thought,
    Action,
    Observation,
    FinalAnswer,
}

/// One recorded event of a session. Action steps carry the tool name and
/// the input in `text`; observation steps carry the tool's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub kind: StepKind,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tool_name: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Answered,
    IterationLimit,
    BackendError,
}

/// Complete record of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub task: String,
    pub steps: Vec<AgentStep>,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub const ANTI_FABRICATION: &str =
    "Do not make up answers. If the context is insufficient, answer 'Not provided'.";

pub const REPAIR_TEXT: &str = "Your last message could not be parsed. Respond with 'Thought: ...', 'Action: <tool name>' followed by 'Action Input: ...', or 'Final Answer: ...'.";

const DEFAULT_SYSTEM_PROMPT: &str = "You are a careful research assistant that extracts structured data from scientific documents. Work step by step, use the available tools to gather evidence, and cite only text you have actually seen in observations.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_iterations: usize,
    pub temperature: f64,
    pub system_prompt: String,
    pub must_not_fabricate: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_iterations: 15,
            temperature: 0.0,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            must_not_fabricate: true,
        }
    }
}

fn compose_system_prompt(cfg: &AgentConfig, tools: &ToolRegistry) -> String {
    let mut prompt = String::new();
    prompt.push_str(&cfg.system_prompt);
    prompt.push_str("\n\nAvailable tools:\n");
    if tools.is_empty() {
        prompt.push_str("(none)\n");
    } else {
        for spec in tools.specs() {
            prompt.push_str(&format!(
                "- {}: {}\n  Input: {}\n",
                spec.name, spec.description, spec.input_schema
            ));
        }
    }
    prompt.push_str(
        "\nRespond in exactly one of these forms:\n\
         Thought: <reasoning about what to do next>\n\
         Action: <tool name>\n\
         Action Input: <input passed to the tool>\n\
         Final Answer: <the complete final result>\n\
         \nAfter an Action, the next user message contains the tool's Observation.",
    );
    if cfg.must_not_fabricate {
        prompt.push_str("\n\n");
        prompt.push_str(ANTI_FABRICATION);
    }
    prompt
}

#[derive(Clone, Copy, PartialEq)]
enum Marker {
    Thought,
    Action,
    ActionInput,
    FinalAnswer,
}

fn marker_of(line: &str) -> Option<(Marker, &str)> {
    let trimmed = line.trim_start();
    for (marker, tag) in [
        (Marker::FinalAnswer, "Final Answer:"),
        (Marker::ActionInput, "Action Input:"),
        (Marker::Action, "Action:"),
        (Marker::Thought, "Thought:"),
    ] {
        if let Some(rest) = trimmed.strip_prefix(tag) {
            return Some((marker, rest));
        }
    }
    None
}

/// Lines from `start` (whose marker remainder is `first`) down to the next
/// marker line, joined verbatim.
fn collect_until_marker(lines: &[&str], start: usize, first: &str) -> String {
    let mut parts = vec![first.to_string()];
    for line in lines.iter().skip(start + 1) {
        if marker_of(line).is_some() {
            break;
        }
        parts.push(line.to_string());
    }
    parts.join("\n").trim().to_string()
}

fn parse_turn(raw: &str) -> (AgentStep, bool) {
    let lines: Vec<&str> = raw.lines().collect();
    let markers: Vec<(usize, Marker, &str)> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| marker_of(l).map(|(m, rest)| (i, m, rest)))
        .collect();

    if let Some((i, _, rest)) = markers.iter().find(|(_, m, _)| *m == Marker::FinalAnswer) {
        let mut parts = vec![rest.to_string()];
        parts.extend(lines.iter().skip(i + 1).map(|l| l.to_string()));
        let text = parts.join("\n").trim().to_string();
        return (
            AgentStep {
                kind: StepKind::FinalAnswer,
                text,
                tool_name: None,
                elapsed_ms: 0,
            },
            false,
        );
    }

    if let Some((ai, _, rest)) = markers.iter().find(|(_, m, _)| *m == Marker::Action) {
        let tool_name = rest.trim().to_string();
        if !tool_name.is_empty() {
            let input = markers
                .iter()
                .find(|(i, m, _)| *i > *ai && *m == Marker::ActionInput)
                .map(|(i, _, first)| collect_until_marker(&lines, *i, first))
                .unwrap_or_default();
            return (
                AgentStep {
                    kind: StepKind::Action,
                    text: input,
                    tool_name: Some(tool_name),
                    elapsed_ms: 0,
                },
                false,
            );
        }
    }

    if let Some((i, _, rest)) = markers.iter().find(|(_, m, _)| *m == Marker::Thought) {
        let text = collect_until_marker(&lines, *i, rest);
        return (
            AgentStep {
                kind: StepKind::Thought,
                text,
                tool_name: None,
                elapsed_ms: 0,
            },
            false,
        );
    }

    (
        AgentStep {
            kind: StepKind::Thought,
            text: raw.to_string(),
            tool_name: None,
            elapsed_ms: 0,
        },
        true,
    )
}

/// Classifies one raw backend completion. Total: anything unparseable
/// degrades to a Thought carrying the raw text.
pub fn parse_backend_turn(raw: &str) -> AgentStep {
    parse_turn(raw).0
}

/// Runs one session against the wall clock.
pub fn run(
    task_prompt: &str,
    tools: &ToolRegistry,
    backend: &dyn LlmBackend,
    cfg: &AgentConfig,
) -> AgentTranscript {
    run_with_clock(task_prompt, tools, backend, cfg, &SystemClock::new())
}

/// Runs one session with an injected clock (constant for replay tests).
pub fn run_with_clock(
    task_prompt: &str,
    tools: &ToolRegistry,
    backend: &dyn LlmBackend,
    cfg: &AgentConfig,
    clock: &dyn Clock,
) -> AgentTranscript {
    let mut steps: Vec<AgentStep> = Vec::new();
    let mut messages = vec![
        ChatMessage::system(compose_system_prompt(cfg, tools)),
        ChatMessage::user(task_prompt),
    ];
    let mut outcome = Outcome::IterationLimit;
    let mut final_text = None;
    let mut error = None;

    for _ in 0..cfg.max_iterations {
        let raw = match backend.complete(cfg.temperature, &messages) {
            Ok(raw) => raw,
            Err(e) => {
                outcome = Outcome::BackendError;
                error = Some(e.to_string());
                break;
            }
        };
        let (mut step, needs_repair) = parse_turn(&raw);
        step.elapsed_ms = clock.now_ms();
        messages.push(ChatMessage::assistant(raw));
        match step.kind {
            StepKind::FinalAnswer => {
                final_text = Some(step.text.clone());
                steps.push(step);
                outcome = Outcome::Answered;
                break;
            }
            StepKind::Action => {
                let tool_name = step.tool_name.clone().unwrap_or_default();
                let input = step.text.clone();
                steps.push(step);
                let observation = match tools.get(&tool_name) {
                    None => format!(
                        "ERROR: unknown tool {:?}; available tools: {}",
                        tool_name,
                        tools.names().join(", ")
                    ),
                    Some(handler) => match handler(&input) {
                        Ok(output) => output,
                        Err(e) => format!("ERROR: {e}"),
                    },
                };
                steps.push(AgentStep {
                    kind: StepKind::Observation,
                    text: observation.clone(),
                    tool_name: None,
                    elapsed_ms: clock.now_ms(),
                });
                messages.push(ChatMessage::user(format!("Observation: {observation}")));
            }
            StepKind::Thought | StepKind::Observation => {
                steps.push(step);
                if needs_repair {
                    steps.push(AgentStep {
                        kind: StepKind::Observation,
                        text: REPAIR_TEXT.to_string(),
                        tool_name: None,
                        elapsed_ms: clock.now_ms(),
                    });
                    messages.push(ChatMessage::user(format!("Observation: {REPAIR_TEXT}")));
                } else {
                    messages.push(ChatMessage::user("Continue."));
                }
            }
        }
    }

    AgentTranscript {
        task: task_prompt.to_string(),
        steps,
        outcome,
        final_text,
        error,
    }
}
