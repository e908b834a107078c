//! Command-following AI teammate.
//!
//! Chat lines from the human are interpreted into a sequence of
//! [`SkillCall`]s, either by a language model (validated, with one retry)
//! or by the deterministic [`RuleParser`]. The agent then executes the
//! skills one at a time through the shared skill executor. Every action it
//! emits is traceable to a skill of a recorded conversation entry.

mod rules;
mod skill;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rules::{Parsed, RuleInput, RuleParser, CLARIFY};
pub use skill::{
    landmark_label, library_description, parse_model_reply, validate, validate_all, Limits,
    SkillCall, SkillError, SkillName, MAX_SAY_CHARS,
};

use crate::llm::{LanguageModel, Prompt, Role};
use crate::protocol::ActionRequest;
use crate::skills::{Controller, ControllerOutput, Executor, Observation, Step};
use crate::world::{AgentId, AgentKind, Material, MissionConfig};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("context file not found: {0}")]
    Missing(String),
    #[error("could not read context file {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {source}")]
    Directive { line: usize, source: SkillError },
}

/// Operator-supplied mission context, prepended to every model call.
///
/// Free text, except that lines of the form `forbid: place, say` remove
/// skills from the library.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AgentContext {
    pub text: String,
    pub forbidden: BTreeSet<SkillName>,
}

impl AgentContext {
    pub fn parse(text: &str) -> Result<Self, ContextError> {
        let mut forbidden = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            let Some(rest) = trimmed
                .get(..7)
                .filter(|head| head.eq_ignore_ascii_case("forbid:"))
                .map(|_| &trimmed[7..])
            else {
                continue;
            };
            for name in rest.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                let skill = name.parse().map_err(|source| ContextError::Directive {
                    line: i + 1,
                    source,
                })?;
                forbidden.insert(skill);
            }
        }
        Ok(Self {
            text: text.to_string(),
            forbidden,
        })
    }

    pub fn allows_place(&self) -> bool {
        !self.forbidden.contains(&SkillName::Place)
    }
}

/// Reads a context file. An empty file is valid and means the agent acts on
/// commands alone.
pub fn load_context_file(path: &Path) -> Result<AgentContext, ContextError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ContextError::Missing(path.display().to_string()),
        _ => ContextError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        },
    })?;
    AgentContext::parse(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Ai,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationEntry {
    pub sim_time: f64,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub resolved_skills: Vec<SkillCall>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("entry at t={got} is earlier than the previous entry at t={last}")]
    OutOfOrder { got: f64, last: f64 },
    #[error("io failure: {0}")]
    Io(String),
}

/// Time-ordered log of what was said and what it resolved to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saved_at: Option<String>,
    entries: Vec<ConversationEntry>,
}

impl ConversationRecord {
    pub fn entries(&self) -> &[ConversationEntry] {
        &self.entries
    }

    pub fn last_time(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.sim_time)
    }

    /// Appends an entry; returns its index.
    pub fn push(&mut self, entry: ConversationEntry) -> Result<usize, RecordError> {
        let last = self.last_time();
        if entry.sim_time < last {
            return Err(RecordError::OutOfOrder {
                got: entry.sim_time,
                last,
            });
        }
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records serialize")
    }

    pub fn save(&mut self, path: &Path, saved_at: impl Into<String>) -> Result<(), RecordError> {
        self.saved_at = Some(saved_at.into());
        std::fs::write(path, self.to_json()).map_err(|e| RecordError::Io(e.to_string()))
    }
}

/// How an interpretation was reached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    /// The model's answer passed validation on this attempt (1 or 2).
    Model { attempt: u8 },
    /// The rule parser, with the reason the model was not used.
    Rules { fallback: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interpretation {
    pub reply: String,
    pub skills: Vec<SkillCall>,
    pub source: Source,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommandError {
    #[error("command text is empty")]
    Empty,
}

/// Turns one command into a reply and a validated skill sequence.
///
/// With a model: ask, validate, and on failure ask once more with the error
/// appended; a second failure or an unreachable model falls back to the rule
/// parser. Without a model the rule parser answers directly.
pub fn interpret_command(
    text: &str,
    summary: &str,
    context: &AgentContext,
    input: &RuleInput<'_>,
    llm: Option<&dyn LanguageModel>,
    parser: &RuleParser,
) -> Result<Interpretation, CommandError> {
    if text.trim().is_empty() {
        return Err(CommandError::Empty);
    }
    let fallback = match llm {
        None => None,
        Some(llm) => match ask_model(text, summary, context, input, llm) {
            Ok(found) => return Ok(found),
            Err(reason) => Some(reason),
        },
    };
    let Parsed { reply, skills } = parser.parse(text, input);
    Ok(Interpretation {
        reply,
        skills,
        source: Source::Rules { fallback },
    })
}

fn ask_model(
    text: &str,
    summary: &str,
    context: &AgentContext,
    input: &RuleInput<'_>,
    llm: &dyn LanguageModel,
) -> Result<Interpretation, String> {
    let mut prompt = Prompt::default();
    let mut system = String::new();
    if !context.text.trim().is_empty() {
        system.push_str(context.text.trim());
        system.push_str("\n\n");
    }
    system.push_str(
        "You are the AI teammate in a block-building mission. Turn the human's message into skills.\n",
    );
    system.push_str(library_description());
    if !context.forbidden.is_empty() {
        let names: Vec<&str> = context.forbidden.iter().map(|s| s.as_str()).collect();
        system.push_str(&format!("\nNever use these skills: {}.", names.join(", ")));
    }
    prompt.push(Role::System, system);
    prompt.push(Role::User, format!("World: {summary}\n\nHuman says: {text}"));

    let mut last_error = String::new();
    for attempt in 1..=2u8 {
        let raw = llm.complete(&prompt).map_err(|e| e.to_string())?;
        let checked = parse_model_reply(&raw).and_then(|(reply, skills)| {
            validate_all(&skills, &input.limits)?;
            Ok((reply, skills))
        });
        match checked {
            Ok((reply, skills)) => {
                return Ok(Interpretation {
                    reply,
                    skills,
                    source: Source::Model { attempt },
                })
            }
            Err(e) => {
                last_error = e.to_string();
                prompt.push(Role::Assistant, raw);
                prompt.push(
                    Role::User,
                    format!("That answer was rejected: {e}. Reply again with one valid JSON object."),
                );
            }
        }
    }
    Err(format!("model output invalid twice: {last_error}"))
}

/// One-line world description for the model.
pub fn summarize(obs: &Observation<'_>) -> String {
    let u = &obs.update;
    let mut out = format!(
        "t={:.1}s of {:.0}s, completion {:.0}%, phase {}",
        u.world.clock,
        obs.mission.time_limit_s,
        u.world.completion * 100.0,
        u.world.phase
    );
    if let Some(layer) = obs.current_layer() {
        let m = obs.mission.plan.layers[layer].material;
        out.push_str(&format!(
            "; current layer {} needs {} more {m}",
            layer + 1,
            obs.cells_remaining(m)
        ));
    }
    out.push_str(&format!("; chest {}", counts(&u.world.chest)));
    if let Some(me) = obs.me() {
        out.push_str(&format!(
            "; you are at {} carrying {}{}",
            me.position.cell(),
            counts(&me.inventory.counts),
            if me.inventory.has_pickaxe() { " and a pickaxe" } else { "" }
        ));
    }
    if let Some(h) = obs.human() {
        out.push_str(&format!(
            "; human at {} carrying {}",
            h.position.cell(),
            counts(&h.inventory.counts)
        ));
    }
    out
}

fn counts(map: &BTreeMap<Material, u32>) -> String {
    if map.values().all(|&n| n == 0) {
        return "nothing".into();
    }
    let parts: Vec<String> = map
        .iter()
        .filter(|&(_, &n)| n > 0)
        .map(|(m, n)| format!("{n} {m}"))
        .collect();
    parts.join(", ")
}

/// A chat line waiting to be interpreted.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingCommand {
    pub from: AgentId,
    pub text: String,
    pub sim_time: f64,
}

/// Everything needed to interpret one command away from the agent, for
/// runners that must not block on a model call.
#[derive(Clone, Debug)]
pub struct InterpretJob {
    pub command: PendingCommand,
    pub summary: String,
    context: AgentContext,
    mission: MissionConfig,
    inventory: BTreeMap<Material, u32>,
    chest: BTreeMap<Material, u32>,
}

impl InterpretJob {
    pub fn run(&self, llm: Option<&dyn LanguageModel>, parser: &RuleParser) -> Interpretation {
        let input = RuleInput {
            limits: Limits {
                mission: &self.mission,
                forbidden: &self.context.forbidden,
            },
            inventory: self.inventory.clone(),
            chest: self.chest.clone(),
        };
        interpret_command(
            &self.command.text,
            &self.summary,
            &self.context,
            &input,
            llm,
            parser,
        )
        .unwrap_or_else(|_| Interpretation {
            reply: CLARIFY.into(),
            skills: Vec::new(),
            source: Source::Rules { fallback: None },
        })
    }
}

/// Where an emitted action came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionOrigin {
    pub sim_time: f64,
    pub action: ActionRequest,
    /// Index of the conversation entry whose `resolved_skills` hold the skill.
    pub entry: usize,
    pub skill: usize,
}

#[derive(Clone, Debug)]
struct Queued {
    entry: usize,
    index: usize,
    skill: SkillCall,
    last_of_entry: bool,
}

/// The command-following teammate.
pub struct CommandAgent {
    id: AgentId,
    context: AgentContext,
    llm: Option<Arc<dyn LanguageModel>>,
    parser: RuleParser,
    deferred: bool,
    inbox: VecDeque<PendingCommand>,
    queue: VecDeque<Queued>,
    current: Option<Queued>,
    executor: Executor,
    record: ConversationRecord,
    origins: Vec<ActionOrigin>,
    outbox: Vec<String>,
}

impl std::fmt::Debug for CommandAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CommandAgent")
            .field("id", &self.id)
            .field("context", &self.context)
            .field("model", &self.llm.is_some())
            .field("queued", &self.queue.len())
            .finish_non_exhaustive()
    }
}

impl CommandAgent {
    /// Rule-parser agent; may place unless the context forbids it.
    pub fn new(id: AgentId, context: AgentContext) -> Self {
        Self {
            id,
            context,
            llm: None,
            parser: RuleParser::default(),
            deferred: false,
            inbox: VecDeque::new(),
            queue: VecDeque::new(),
            current: None,
            executor: Executor::new(true),
            record: ConversationRecord::default(),
            origins: Vec::new(),
            outbox: Vec::new(),
        }
    }

    pub fn with_llm(mut self, llm: Arc<dyn LanguageModel>) -> Self {
        self.llm = Some(llm);
        self
    }

    /// Revokes placement: `place` joins the forbidden skills.
    pub fn with_can_place(mut self, can_place: bool) -> Self {
        if can_place {
            self.context.forbidden.remove(&SkillName::Place);
        } else {
            self.context.forbidden.insert(SkillName::Place);
        }
        self
    }

    /// Leaves interpretation to the caller through [`Self::take_jobs`] and
    /// [`Self::accept`].
    pub fn deferred(mut self) -> Self {
        self.deferred = true;
        self
    }

    pub fn context(&self) -> &AgentContext {
        &self.context
    }

    pub fn conversation(&self) -> &ConversationRecord {
        &self.record
    }

    pub fn conversation_mut(&mut self) -> &mut ConversationRecord {
        &mut self.record
    }

    pub fn origins(&self) -> &[ActionOrigin] {
        &self.origins
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some() || !self.queue.is_empty() || !self.inbox.is_empty()
    }

    /// Commands received since the last call, packaged for interpretation.
    pub fn take_jobs(&mut self, obs: &Observation<'_>) -> Vec<InterpretJob> {
        let summary = summarize(obs);
        let me = obs.me();
        self.inbox
            .drain(..)
            .map(|command| InterpretJob {
                command,
                summary: summary.clone(),
                context: self.context.clone(),
                mission: obs.mission.clone(),
                inventory: me.map(|m| m.inventory.counts.clone()).unwrap_or_default(),
                chest: obs.update.world.chest.clone(),
            })
            .collect()
    }

    /// Records an interpretation, queues its skills and its reply.
    pub fn accept(&mut self, result: Interpretation, now: f64) {
        let at = now.max(self.record.last_time());
        let entry = self
            .record
            .push(ConversationEntry {
                sim_time: at,
                speaker: Speaker::Ai,
                text: result.reply.clone(),
                resolved_skills: result.skills.clone(),
            })
            .expect("clamped to the last entry time");
        self.outbox.push(result.reply);
        let n = result.skills.len();
        self.queue
            .extend(result.skills.into_iter().enumerate().map(|(index, skill)| Queued {
                entry,
                index,
                skill,
                last_of_entry: index + 1 == n,
            }));
    }

    fn steps_for(&self, skill: &SkillCall, obs: &Observation<'_>) -> Vec<Step> {
        let own = |m: Material| obs.me().map_or(0, |me| me.inventory.count(m));
        match skill {
            SkillCall::GoTo { target } => vec![Step::GoTo(*target)],
            SkillCall::Mine { material, count } => {
                let cap = obs.mission.inventory_capacity;
                vec![Step::Mine {
                    material: *material,
                    until: (own(*material) + count).min(cap),
                }]
            }
            SkillCall::Craft { .. } => {
                if obs.me().is_some_and(|me| me.inventory.has_pickaxe()) {
                    return Vec::new();
                }
                let cost = obs.mission.pickaxe_wood_cost;
                let mut steps = Vec::new();
                if own(Material::Wood) < cost {
                    steps.push(Step::Mine {
                        material: Material::Wood,
                        until: cost,
                    });
                }
                steps.push(Step::CraftPickaxe);
                steps
            }
            SkillCall::ChestDeposit { material, count } => vec![Step::Deposit {
                material: *material,
                n: Some(*count),
            }],
            SkillCall::ChestWithdraw { material, count } => vec![Step::Withdraw {
                material: *material,
                n: *count,
            }],
            SkillCall::Place { cell, material } => vec![Step::Place {
                cell: *cell,
                material: *material,
            }],
            SkillCall::Say { .. } => Vec::new(),
        }
    }

    fn drop_rest_of(&mut self, entry: usize) {
        self.queue.retain(|q| q.entry != entry);
    }

    /// Advances through skills until one yields an action or must wait.
    fn drive(&mut self, obs: &Observation<'_>) -> Option<ActionRequest> {
        loop {
            if let Some(cur) = self.current.clone() {
                if self.executor.failed() {
                    self.outbox
                        .push(format!("I couldn't finish {}, so I stopped that request.", cur.skill));
                    self.drop_rest_of(cur.entry);
                    self.current = None;
                    self.executor = Executor::new(true);
                    continue;
                }
                if let Some(action) = self.executor.next_action(obs) {
                    self.origins.push(ActionOrigin {
                        sim_time: obs.sim_time(),
                        action,
                        entry: cur.entry,
                        skill: cur.index,
                    });
                    return Some(action);
                }
                if !self.executor.is_idle() {
                    return None;
                }
                if self.executor.failed() {
                    continue;
                }
                if cur.last_of_entry && self.record.entries()[cur.entry].resolved_skills.len() > 1 {
                    self.outbox.push("Done.".into());
                }
                self.current = None;
            }
            let next = self.queue.pop_front()?;
            if let SkillCall::Say { text } = &next.skill {
                self.outbox.push(text.clone());
                continue;
            }
            self.executor = Executor::with_steps(true, self.steps_for(&next.skill, obs));
            self.current = Some(next);
        }
    }
}

impl Controller for CommandAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Ai
    }

    fn can_place(&self) -> Option<bool> {
        Some(self.context.allows_place())
    }

    fn on_update(&mut self, obs: &Observation<'_>) -> ControllerOutput {
        if !self.deferred {
            let llm = self.llm.clone();
            for job in self.take_jobs(obs) {
                let result = job.run(llm.as_deref(), &self.parser);
                self.accept(result, obs.sim_time());
            }
        }
        let action = self.drive(obs);
        ControllerOutput {
            action,
            traces: Vec::new(),
            chat: std::mem::take(&mut self.outbox),
        }
    }

    fn on_chat(&mut self, from: &AgentId, text: &str, sim_time: f64) {
        if *from == self.id || text.trim().is_empty() {
            return;
        }
        let at = sim_time.max(self.record.last_time());
        let _ = self.record.push(ConversationEntry {
            sim_time: at,
            speaker: Speaker::Human,
            text: text.to_string(),
            resolved_skills: Vec::new(),
        });
        self.inbox.push_back(PendingCommand {
            from: from.clone(),
            text: text.to_string(),
            sim_time: at,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockLlm, MockRule, MockScript};
    use crate::skills::Landmark;

    fn input<'a>(mission: &'a MissionConfig, context: &'a AgentContext) -> RuleInput<'a> {
        RuleInput {
            limits: Limits {
                mission,
                forbidden: &context.forbidden,
            },
            inventory: BTreeMap::new(),
            chest: BTreeMap::new(),
        }
    }

    fn mock(replies: &[&str]) -> MockLlm {
        // Each rule fires once the prompt holds as many rejections as its index.
        let rules = replies
            .iter()
            .enumerate()
            .rev()
            .map(|(i, r)| MockRule {
                contains: None,
                prompt_contains: (i > 0).then(|| "rejected".to_string()),
                reply: r.to_string(),
            })
            .collect();
        MockLlm::new(MockScript {
            rules,
            default_reply: None,
            unavailable: false,
        })
    }

    #[test]
    fn directives_forbid_skills() {
        let ctx = AgentContext::parse("Help the human.\nFORBID: place, say\n").unwrap();
        assert!(!ctx.allows_place());
        assert!(ctx.forbidden.contains(&SkillName::Say));
        assert!(matches!(
            AgentContext::parse("forbid: teleport"),
            Err(ContextError::Directive { line: 1, .. })
        ));
        assert_eq!(AgentContext::parse("").unwrap(), AgentContext::default());
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = load_context_file(Path::new("/definitely/not/here.md")).unwrap_err();
        assert!(matches!(err, ContextError::Missing(_)));
    }

    #[test]
    fn model_answer_is_used_when_valid() {
        let mission = MissionConfig::default();
        let ctx = AgentContext::default();
        let llm = mock(&[r#"{"reply":"going","skills":[{"skill":"go_to","args":{"target":"chest"}}]}"#]);
        let out = interpret_command("go to the chest", "", &ctx, &input(&mission, &ctx), Some(&llm), &RuleParser::default())
            .unwrap();
        assert_eq!(out.source, Source::Model { attempt: 1 });
        assert_eq!(
            out.skills,
            vec![SkillCall::GoTo {
                target: Landmark::Chest
            }]
        );
    }

    #[test]
    fn one_retry_then_rules() {
        let mission = MissionConfig::default();
        let ctx = AgentContext::default();
        let good = r#"{"reply":"ok","skills":[{"skill":"craft","args":{"item":"pickaxe"}}]}"#;
        let llm = mock(&["not json", good]);
        let out = interpret_command("make a pickaxe", "", &ctx, &input(&mission, &ctx), Some(&llm), &RuleParser::default())
            .unwrap();
        assert_eq!(out.source, Source::Model { attempt: 2 });

        let llm = mock(&["not json", "still not json"]);
        let out = interpret_command("get 5 wood", "", &ctx, &input(&mission, &ctx), Some(&llm), &RuleParser::default())
            .unwrap();
        assert!(matches!(out.source, Source::Rules { fallback: Some(_) }));
        assert_eq!(out.skills.len(), 2);
    }

    #[test]
    fn forbidden_model_skills_fall_back() {
        let mission = MissionConfig::default();
        let ctx = AgentContext::parse("forbid: place").unwrap();
        let (cell, m, _) = mission.plan.cells().next().unwrap();
        let place = format!(
            r#"{{"reply":"ok","skills":[{{"skill":"place","args":{{"cell":{{"x":{},"y":{}}},"material":"{m}"}}}}]}}"#,
            cell.x, cell.y
        );
        let llm = mock(&[&place, &place]);
        let text = format!("place {m} at {},{}", cell.x, cell.y);
        let out = interpret_command(&text, "", &ctx, &input(&mission, &ctx), Some(&llm), &RuleParser::default())
            .unwrap();
        assert!(out.skills.iter().all(|s| s.name() != SkillName::Place));
    }

    #[test]
    fn unavailable_model_uses_rules_and_empty_is_rejected() {
        let mission = MissionConfig::default();
        let ctx = AgentContext::default();
        let llm = crate::llm::Unreachable;
        let out = interpret_command("how are you?", "", &ctx, &input(&mission, &ctx), Some(&llm), &RuleParser::default())
            .unwrap();
        assert!(out.skills.is_empty());
        assert!(matches!(out.source, Source::Rules { fallback: Some(_) }));
        assert_eq!(
            interpret_command("  ", "", &ctx, &input(&mission, &ctx), None, &RuleParser::default()),
            Err(CommandError::Empty)
        );
    }

    #[test]
    fn record_rejects_time_travel() {
        let mut rec = ConversationRecord::default();
        let entry = |t: f64| ConversationEntry {
            sim_time: t,
            speaker: Speaker::Human,
            text: "x".into(),
            resolved_skills: Vec::new(),
        };
        rec.push(entry(1.0)).unwrap();
        rec.push(entry(1.0)).unwrap();
        assert!(rec.push(entry(0.5)).is_err());
        let back: ConversationRecord = serde_json::from_str(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
    }
}
