//! After-action explanation: mission storage, per-mission context
//! documents, chat sessions and prompt assembly for questions asked while
//! scrubbing a replay.

mod context;
mod prompt;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{AiProfile, MissionContextDoc};
pub use prompt::{estimate_tokens, PromptBundle, DEFAULT_TOKEN_BUDGET, WINDOW_S};

use crate::episode::MissionDir;
use crate::llm::{ChatMessage, LanguageModel, Role};
use crate::mission_log::MissionTimeline;
use crate::replay::{extract_markers, render_png, Marker, MarkerKind, Replayer, ReplayError, Viewpoint};
use crate::world::MissionStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AaeError {
    #[error("mission not found: {0}")]
    MissionNotFound(String),
    #[error("mission {0} has no context document")]
    ContextMissing(String),
    #[error("session not found: {0}")]
    SessionNotFound(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("{0}")]
    BadRequest(String),
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("stored timeline is invalid: {0}")]
    Timeline(String),
    #[error("{0}")]
    Internal(String),
}

impl AaeError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AaeError::MissionNotFound(_) => "mission-not-found",
            AaeError::ContextMissing(_) => "context-missing",
            AaeError::SessionNotFound(_) => "session-not-found",
            AaeError::EmptyQuery => "empty-query",
            AaeError::BadRequest(_) => "bad-request",
            AaeError::LlmUnavailable(_) => "llm-unavailable",
            AaeError::Timeline(_) => "schema-invalid",
            AaeError::Internal(_) => "internal",
        }
    }
}

impl From<ReplayError> for AaeError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::SchemaInvalid(e) => AaeError::Timeline(e.to_string()),
            ReplayError::TimeOutOfRange { .. } | ReplayError::UnknownViewpoint(_) => {
                AaeError::BadRequest(e.to_string())
            }
            other => AaeError::Internal(other.to_string()),
        }
    }
}

/// Mission ids double as directory names, so only plain names pass.
fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub id: String,
    pub status: MissionStatus,
    pub ended_at: Option<f64>,
    pub final_completion: Option<f64>,
    pub events: usize,
}

/// `missions/<id>/` directories on disk, with parsed timelines cached.
#[derive(Debug)]
pub struct MissionStore {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<MissionTimeline>>>,
}

impl MissionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> Result<MissionDir, AaeError> {
        if !valid_id(id) {
            return Err(AaeError::MissionNotFound(id.to_string()));
        }
        Ok(MissionDir::new(&self.root, id))
    }

    pub fn list(&self) -> Result<Vec<MissionSummary>, AaeError> {
        let entries = match std::fs::read_dir(&self.root) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(AaeError::Internal(e.to_string())),
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join("timeline.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            // Unreadable missions are skipped rather than failing the listing.
            let Ok(t) = self.timeline(&id) else { continue };
            out.push(MissionSummary {
                id,
                status: t.footer.map_or(MissionStatus::Ongoing, |f| f.status),
                ended_at: t.footer.and_then(|f| f.ended_at),
                final_completion: t.footer.map(|f| f.final_completion),
                events: t.events.len(),
            });
        }
        Ok(out)
    }

    pub fn timeline(&self, id: &str) -> Result<Arc<MissionTimeline>, AaeError> {
        if let Some(t) = self.cache.lock().expect("cache lock").get(id) {
            return Ok(t.clone());
        }
        let path = self.dir(id)?.timeline_path();
        if !path.is_file() {
            return Err(AaeError::MissionNotFound(id.to_string()));
        }
        let timeline = Arc::new(MissionTimeline::load(&path).map_err(|e| AaeError::Timeline(e.to_string()))?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(id.to_string(), timeline.clone());
        Ok(timeline)
    }

    /// The stored file, byte for byte.
    pub fn timeline_bytes(&self, id: &str) -> Result<Vec<u8>, AaeError> {
        self.timeline(id)?;
        std::fs::read(self.dir(id)?.timeline_path()).map_err(|e| AaeError::Internal(e.to_string()))
    }

    pub fn context(&self, id: &str) -> Result<MissionContextDoc, AaeError> {
        self.timeline(id)?;
        let text = std::fs::read_to_string(self.dir(id)?.context_path())
            .map_err(|_| AaeError::ContextMissing(id.to_string()))?;
        MissionContextDoc::from_text(text).ok_or_else(|| AaeError::ContextMissing(id.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub mission_id: String,
    /// Alternating user and assistant turns.
    pub history: Vec<ChatMessage>,
    /// Unix seconds.
    #[serde(default)]
    pub created_at: u64,
}

/// Live sessions, each behind its own lock so queries on one session run
/// one at a time while other sessions proceed.
#[derive(Debug)]
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
    next: Mutex<u64>,
    persist_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            next: Mutex::new(1),
            persist_dir: None,
        }
    }

    /// Loads any sessions saved in `dir` and saves new turns there.
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self, AaeError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| AaeError::Internal(e.to_string()))?;
        let mut sessions = HashMap::new();
        let mut next = 1;
        for entry in std::fs::read_dir(&dir).map_err(|e| AaeError::Internal(e.to_string()))? {
            let path = entry.map_err(|e| AaeError::Internal(e.to_string()))?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| AaeError::Internal(e.to_string()))?;
            let session: ChatSession = serde_json::from_slice(&bytes)
                .map_err(|e| AaeError::Internal(format!("{}: {e}", path.display())))?;
            if let Some(n) = session.id.strip_prefix("s-").and_then(|n| u64::from_str_radix(n, 16).ok()) {
                next = next.max(n + 1);
            }
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(Self {
            sessions: Mutex::new(sessions),
            next: Mutex::new(next),
            persist_dir: Some(dir),
        })
    }

    pub fn create(&self, mission_id: &str) -> Result<ChatSession, AaeError> {
        let id = {
            let mut next = self.next.lock().expect("id lock");
            let id = format!("s-{:08x}", *next);
            *next += 1;
            id
        };
        let session = ChatSession {
            id: id.clone(),
            mission_id: mission_id.to_string(),
            history: Vec::new(),
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        self.save(&session)?;
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<ChatSession>>, AaeError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| AaeError::SessionNotFound(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn save(&self, session: &ChatSession) -> Result<(), AaeError> {
        let Some(dir) = &self.persist_dir else {
            return Ok(());
        };
        let json = serde_json::to_vec_pretty(session).expect("sessions serialize");
        std::fs::write(dir.join(format!("{}.json", session.id)), json)
            .map_err(|e| AaeError::Internal(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub session_id: String,
    pub answer: String,
    pub history_len: usize,
    pub truncated: bool,
}

/// Everything the HTTP layer exposes, minus HTTP.
pub struct AaeService {
    pub missions: MissionStore,
    pub sessions: SessionStore,
    llm: Arc<dyn LanguageModel>,
    pub budget_tokens: usize,
}

impl std::fmt::Debug for AaeService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AaeService")
            .field("missions", &self.missions)
            .field("sessions", &self.sessions.len())
            .field("budget_tokens", &self.budget_tokens)
            .finish_non_exhaustive()
    }
}

impl AaeService {
    pub fn new(missions: MissionStore, sessions: SessionStore, llm: Arc<dyn LanguageModel>) -> Self {
        Self {
            missions,
            sessions,
            llm,
            budget_tokens: DEFAULT_TOKEN_BUDGET,
        }
    }

    pub fn create_session(&self, mission_id: &str) -> Result<ChatSession, AaeError> {
        self.missions.timeline(mission_id)?;
        self.missions.context(mission_id)?;
        self.sessions.create(mission_id)
    }

    /// Asks about a mission at a playhead. The session stays locked for the
    /// whole call; on failure its history is left as it was.
    pub fn query(&self, session_id: &str, text: &str, playhead_s: f64) -> Result<Answer, AaeError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(AaeError::EmptyQuery);
        }
        let handle = self.sessions.get(session_id)?;
        let mut session = handle.lock().expect("session lock");
        let timeline = self.missions.timeline(&session.mission_id)?;
        let end = timeline.end_time();
        if !playhead_s.is_finite() || !(0.0..=end).contains(&playhead_s) {
            return Err(AaeError::BadRequest(format!(
                "playhead {playhead_s} is outside the mission, which spans 0..={end}"
            )));
        }
        let context = self.missions.context(&session.mission_id)?;
        let bundle = PromptBundle::build(
            &context,
            &timeline,
            &session.history,
            playhead_s,
            text,
            self.budget_tokens,
        );
        let answer = self
            .llm
            .complete(&bundle.to_prompt())
            .map_err(|e| AaeError::LlmUnavailable(e.to_string()))?;
        let mut updated = session.clone();
        updated.history.push(ChatMessage::new(Role::User, text));
        updated.history.push(ChatMessage::new(Role::Assistant, answer.clone()));
        self.sessions.save(&updated)?;
        *session = updated;
        Ok(Answer {
            session_id: session.id.clone(),
            answer,
            history_len: session.history.len(),
            truncated: bundle.is_truncated(),
        })
    }

    pub fn markers(&self, mission_id: &str, kinds: &[MarkerKind]) -> Result<Vec<Marker>, AaeError> {
        let timeline = self.missions.timeline(mission_id)?;
        Ok(extract_markers(&timeline, kinds))
    }

    pub fn frame_png(&self, mission_id: &str, t: f64, view: &str) -> Result<Vec<u8>, AaeError> {
        let timeline = self.missions.timeline(mission_id)?;
        let view: Viewpoint = view.parse()?;
        let snapshot = Replayer::new(&timeline)?.seek(t)?;
        Ok(render_png(&snapshot, &view)?)
    }
}
