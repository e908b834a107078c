//! Language model abstraction shared by the command agent and the
//! after-action explanation service, plus a deterministic scripted mock.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Line that carries the viewer's playhead in every explanation prompt.
pub const PLAYHEAD_PREFIX: &str = "viewer is currently at t=";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// Chat-style prompt: an ordered list of role-tagged messages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<ChatMessage>,
}

impl Prompt {
    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.messages.push(ChatMessage::new(role, content));
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("llm unavailable: {0}")]
    Unavailable(String),
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError>;
}

/// A model that is never reachable.
#[derive(Clone, Debug, Default)]
pub struct Unreachable;

impl LanguageModel for Unreachable {
    fn complete(&self, _prompt: &Prompt) -> Result<String, LlmError> {
        Err(LlmError::Unavailable("no language model configured".into()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Case-insensitive substring of the last user message.
    #[serde(default)]
    pub contains: Option<String>,
    /// Case-insensitive substring of any message.
    #[serde(default)]
    pub prompt_contains: Option<String>,
    /// Reply template; `{playhead}`, `{phase_at_playhead}` and `{query}` are
    /// filled from the prompt.
    pub reply: String,
}

/// Script for [`MockLlm`]: first matching rule wins.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default, rename = "rule")]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
    /// Behave like an endpoint that is down.
    #[serde(default)]
    pub unavailable: bool,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("could not read mock script {path}: {message}")]
    Io { path: String, message: String },
    #[error("could not parse mock script: {0}")]
    Parse(String),
}

impl MockScript {
    pub fn from_toml_str(text: &str) -> Result<Self, ScriptError> {
        toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }
}

/// Deterministic stand-in for a real model: a pure function of the prompt
/// and its script.
#[derive(Clone, Debug, Default)]
pub struct MockLlm {
    script: MockScript,
}

impl MockLlm {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    /// Answers "what phase" questions from the timeline in the prompt.
    pub fn phase_lookup() -> Self {
        Self::new(MockScript {
            rules: vec![MockRule {
                contains: Some("phase".into()),
                prompt_contains: None,
                reply: "At t={playhead} s the AI was in phase {phase_at_playhead}.".into(),
            }],
            default_reply: None,
            unavailable: false,
        })
    }
}

impl LanguageModel for MockLlm {
    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        if self.script.unavailable {
            return Err(LlmError::Unavailable("mock endpoint is scripted to be down".into()));
        }
        let query = prompt.last_user().unwrap_or("").to_lowercase();
        let whole = prompt.text().to_lowercase();
        let rule = self.script.rules.iter().find(|r| {
            r.contains
                .as_ref()
                .is_none_or(|needle| query.contains(&needle.to_lowercase()))
                && r.prompt_contains
                    .as_ref()
                    .is_none_or(|needle| whole.contains(&needle.to_lowercase()))
        });
        let template = match (rule, &self.script.default_reply) {
            (Some(rule), _) => rule.reply.as_str(),
            (None, Some(default)) => default.as_str(),
            (None, None) => "I have no scripted answer for that.",
        };
        Ok(fill_template(template, prompt))
    }
}

fn fill_template(template: &str, prompt: &Prompt) -> String {
    let mut out = template.to_string();
    if out.contains("{query}") {
        out = out.replace("{query}", prompt.last_user().unwrap_or(""));
    }
    let playhead = playhead_in(prompt);
    if out.contains("{playhead}") {
        let text = playhead.map_or_else(|| "unknown".to_string(), format_seconds);
        out = out.replace("{playhead}", &text);
    }
    if out.contains("{phase_at_playhead}") {
        let phase = playhead
            .and_then(|t| timeline_in(prompt).map(|events| phase_at(&events, t)))
            .map_or_else(|| "unknown".to_string(), |p| p.to_string());
        out = out.replace("{phase_at_playhead}", &phase);
    }
    out
}

/// Shortest decimal form of a time in seconds.
pub fn format_seconds(t: f64) -> String {
    let s = format!("{t:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// The playhead named by the prompt's playhead line.
pub fn playhead_in(prompt: &Prompt) -> Option<f64> {
    prompt.messages.iter().rev().find_map(|m| {
        m.content.lines().find_map(|line| {
            let rest = line.trim().strip_prefix(PLAYHEAD_PREFIX)?;
            rest.split_whitespace().next()?.parse().ok()
        })
    })
}

/// Events of the first JSON code block in the prompt that holds either a
/// timeline object or a bare event array.
fn timeline_in(prompt: &Prompt) -> Option<Vec<Value>> {
    for m in &prompt.messages {
        let mut rest = m.content.as_str();
        while let Some(start) = rest.find("```json") {
            let body = &rest[start + "```json".len()..];
            let Some(end) = body.find("```") else { break };
            if let Ok(value) = serde_json::from_str::<Value>(&body[..end]) {
                let events = match value {
                    Value::Array(events) => Some(events),
                    Value::Object(mut map) => match map.remove("events") {
                        Some(Value::Array(events)) => Some(events),
                        _ => None,
                    },
                    _ => None,
                };
                if events.is_some() {
                    return events;
                }
            }
            rest = &body[end + 3..];
        }
    }
    None
}

/// Phase of the latest decision trace at or before `t`; falls back to world
/// phase deltas when no trace exists yet, then to phase 1.
fn phase_at(events: &[Value], t: f64) -> u64 {
    let mut from_trace = None;
    let mut from_world = None;
    for e in events {
        let Some(ts) = e.get("timestamp").and_then(Value::as_f64) else {
            continue;
        };
        if ts > t {
            break;
        }
        let action = &e["action"];
        if let Some(traces) = action.get("decision_traces").and_then(Value::as_array) {
            if let Some(p) = traces.iter().filter_map(|tr| tr["phase"].as_u64()).next_back() {
                from_trace = Some(p);
            }
        }
        if let Some(p) = action.pointer("/world/phase").and_then(Value::as_u64) {
            from_world = Some(p);
        }
    }
    from_trace.or(from_world).unwrap_or(1)
}
