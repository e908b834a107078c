//! Headless episodes: a scripted human plus an optional AI teammate run in
//! one deterministic loop, producing the outcome, the mission timeline and
//! a capture of the live world at every logged event.

mod human;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use human::{IdleAgent, ScriptedHuman};

use crate::aae::MissionContextDoc;
use crate::command_agent::{AgentContext, CommandAgent, ContextError};
use crate::dt_agent::{DecisionTreePolicy, DtAgent};
use crate::mission_log::{LogError, MissionLog, MissionTimeline};
use crate::protocol::StateUpdate;
use crate::skills::{Controller, Observation};
use crate::world::{
    AgentId, ConfigError, MissionConfig, MissionOutcome, MissionStatus, WorldError, WorldState,
};

pub const HUMAN_ID: &str = "human";
pub const AI_ID: &str = "ai";

/// Which teammate joins the scripted human.
#[derive(Clone, Debug)]
pub enum AiChoice {
    DecisionTree(DecisionTreePolicy),
    /// Command agent driven by the rule parser; the human sends these lines.
    Command {
        context: String,
        commands: Vec<(f64, String)>,
    },
    /// An AI that joins (so the mission starts) and never acts.
    None,
}

impl AiChoice {
    pub fn label(&self) -> &'static str {
        match self {
            AiChoice::DecisionTree(_) => "dt",
            AiChoice::Command { .. } => "cmd",
            AiChoice::None => "none",
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("io failure: {0}")]
    Io(String),
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub outcome: MissionOutcome,
    pub timeline: MissionTimeline,
    /// Live world right after each logged event, index-aligned with
    /// `timeline.events`.
    pub capture: Vec<WorldState>,
    /// Decisions made by the AI teammate, when it reports them.
    pub ai_decisions: Option<u64>,
    pub final_world: WorldState,
}

impl EpisodeResult {
    pub fn completion_time(&self) -> Option<f64> {
        (self.outcome.status == MissionStatus::Success)
            .then_some(self.outcome.ended_at)
            .flatten()
    }
}

/// Mission id for a headless run: stable across identical inputs.
pub fn mission_id(config: &MissionConfig, ai: &AiChoice, seed: u64) -> String {
    format!("{}-{}-s{seed}", &config.digest()[..8], ai.label())
}

pub fn run_episode(config: MissionConfig, ai: AiChoice, seed: u64) -> Result<EpisodeResult, EpisodeError> {
    let config = config.with_seed(seed);
    config.validate()?;
    let id = mission_id(&config, &ai, seed);
    let mut world = WorldState::init(config.clone())?;

    let human_id = AgentId::new(HUMAN_ID).expect("valid id");
    let ai_id = AgentId::new(AI_ID).expect("valid id");
    let human_chat = match &ai {
        AiChoice::Command { commands, .. } => commands.clone(),
        _ => Vec::new(),
    };
    let is_dt = matches!(ai, AiChoice::DecisionTree(_));
    let mut controllers: Vec<Box<dyn Controller>> = vec![Box::new(
        ScriptedHuman::new(human_id.clone(), seed).with_chat(human_chat),
    )];
    match ai {
        AiChoice::DecisionTree(policy) => controllers.push(Box::new(DtAgent::new(ai_id.clone(), policy))),
        AiChoice::Command { context, .. } => {
            // Only the scripted human places in headless runs.
            let context = AgentContext::parse(&context)?;
            controllers.push(Box::new(
                CommandAgent::new(ai_id.clone(), context).with_can_place(false),
            ));
        }
        AiChoice::None => controllers.push(Box::new(IdleAgent::new(ai_id.clone()))),
    }
    controllers.sort_by(|a, b| a.id().cmp(b.id()));
    let dt_handle = controllers.iter().position(|c| is_dt && *c.id() == ai_id);
    for c in &controllers {
        world.join(c.id().clone(), c.kind(), c.can_place())?;
    }

    let mut log = MissionLog::open(id, &world, None)?;
    let mut capture = Vec::new();
    let dt = config.tick_seconds();
    let mut dt_decisions = 0;
    loop {
        let outcome = world.check_termination();
        if outcome.status != MissionStatus::Ongoing {
            let before = log.events().len();
            let timeline = log.close(&world, outcome)?;
            if timeline.events.len() > before {
                capture.push(world.clone());
            }
            return Ok(EpisodeResult {
                outcome,
                timeline,
                capture,
                ai_decisions: dt_handle.map(|_| dt_decisions),
                final_world: world,
            });
        }

        let update = StateUpdate::from_world(&world);
        let mut actions = BTreeMap::new();
        let mut said = Vec::new();
        for (i, c) in controllers.iter_mut().enumerate() {
            let me = c.id().clone();
            let obs = Observation {
                me: &me,
                mission: &config,
                update: &update,
            };
            let out = c.on_update(&obs);
            if Some(i) == dt_handle {
                dt_decisions += out.traces.len() as u64;
            }
            if let Some(action) = out.action {
                actions.insert(c.id().clone(), action);
            }
            for trace in out.traces {
                log.submit_trace(trace);
            }
            for text in out.chat {
                said.push((c.id().clone(), text));
            }
        }
        for (from, text) in said {
            for c in controllers.iter_mut().filter(|c| *c.id() != from) {
                c.on_chat(&from, &text, world.clock());
            }
            log.submit_chat(from, text);
        }
        if log.record(&world) {
            capture.push(world.clone());
        }
        world.step(&actions, dt)?;
    }
}

/// `missions/<id>/` with the timeline, context document, capture and frames.
#[derive(Clone, Debug)]
pub struct MissionDir {
    pub root: PathBuf,
}

impl MissionDir {
    pub fn new(missions: &Path, id: &str) -> Self {
        Self {
            root: missions.join(id),
        }
    }

    pub fn timeline_path(&self) -> PathBuf {
        self.root.join("timeline.json")
    }

    pub fn context_path(&self) -> PathBuf {
        self.root.join("context.md")
    }

    pub fn capture_path(&self) -> PathBuf {
        self.root.join("capture.bin")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }

    pub fn write(&self, result: &EpisodeResult, context: &MissionContextDoc) -> Result<(), EpisodeError> {
        let io = |e: std::io::Error| EpisodeError::Io(e.to_string());
        std::fs::create_dir_all(self.frames_dir()).map_err(io)?;
        std::fs::write(self.timeline_path(), result.timeline.to_json()).map_err(io)?;
        std::fs::write(self.context_path(), context.text()).map_err(io)?;
        write_capture(&self.capture_path(), &result.capture)?;
        Ok(())
    }
}

/// Length-prefixed JSON world snapshots.
pub fn write_capture(path: &Path, capture: &[WorldState]) -> Result<(), EpisodeError> {
    let io = |e: std::io::Error| EpisodeError::Io(e.to_string());
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for world in capture {
        let json = world.to_json();
        file.write_all(&(json.len() as u32).to_be_bytes()).map_err(io)?;
        file.write_all(json.as_bytes()).map_err(io)?;
    }
    file.flush().map_err(io)
}

pub fn read_capture(path: &Path) -> Result<Vec<WorldState>, EpisodeError> {
    let io = |e: std::io::Error| EpisodeError::Io(e.to_string());
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io)?
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let mut out = Vec::new();
    let mut rest = bytes.as_slice();
    while let Some((len, tail)) = rest.split_first_chunk::<4>() {
        let len = u32::from_be_bytes(*len) as usize;
        if tail.len() < len {
            return Err(EpisodeError::Io("truncated capture".into()));
        }
        let world = serde_json::from_slice(&tail[..len])
            .map_err(|e| EpisodeError::Io(format!("capture entry: {e}")))?;
        out.push(world);
        rest = &tail[len..];
    }
    if !rest.is_empty() {
        return Err(EpisodeError::Io("trailing bytes in capture".into()));
    }
    Ok(out)
}
