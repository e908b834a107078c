//! Live game server: one tick loop owns the world; every WebSocket session
//! talks to it through channels.
//!
//! A binary WebSocket message carries one length-prefixed frame; a text
//! message carries the bare JSON envelope. The server answers in the mode
//! the client last used.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use hmt_core::aae::{AiProfile, MissionContextDoc};
use hmt_core::dt_agent::{DecisionTrace, DecisionTreePolicy};
use hmt_core::episode::{write_capture, MissionDir};
use hmt_core::mission_log::{MissionLog, MissionTimeline};
use hmt_core::protocol::{
    decode, decode_json, encode, mission_start_gate, ActionRequest, ClientMessage, Envelope,
    ErrorCode, Sequencer, ServerMessage, StateUpdate,
};
use hmt_core::{AgentId, AgentKind, MissionConfig, MissionOutcome, MissionStatus, WorldState};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8400;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("could not bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] hmt_core::world::ConfigError),
    #[error(transparent)]
    World(#[from] hmt_core::WorldError),
    #[error(transparent)]
    Log(#[from] hmt_core::mission_log::LogError),
    #[error("could not write mission files: {0}")]
    Io(String),
    #[error("tick loop stopped without an outcome")]
    Aborted,
}

/// How the AI teammate is described in the generated context document.
#[derive(Clone, Debug, Default)]
pub enum AiDescription {
    #[default]
    Connected,
    DecisionTree(DecisionTreePolicy),
    Command,
    /// Operator-written context replaces the generated one.
    Text(MissionContextDoc),
}

#[derive(Clone, Debug)]
pub struct ServerOptions {
    pub config: MissionConfig,
    pub missions_dir: PathBuf,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// Ticks between state broadcasts.
    pub broadcast_every: u32,
    pub ai: AiDescription,
    /// Static web client served next to `/play`.
    pub ui_dir: Option<PathBuf>,
}

impl ServerOptions {
    pub fn new(config: MissionConfig, missions_dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            missions_dir: missions_dir.into(),
            speed: 1.0,
            broadcast_every: 1,
            ai: AiDescription::default(),
            ui_dir: None,
        }
    }
}

/// What a finished live mission left on disk.
#[derive(Clone, Debug)]
pub struct MissionRecord {
    pub id: String,
    pub outcome: MissionOutcome,
    pub dir: PathBuf,
    pub events: usize,
}

#[derive(Debug)]
enum Outbound {
    Send { sim_time: f64, msg: ServerMessage },
    Close,
}

type Outbox = mpsc::UnboundedSender<Outbound>;

#[derive(Debug)]
enum Inbound {
    Join {
        name: AgentId,
        kind: AgentKind,
        can_place: Option<bool>,
        outbox: Outbox,
        reply: oneshot::Sender<bool>,
    },
    Action { agent: AgentId, action: ActionRequest },
    Trace { agent: AgentId, trace: DecisionTrace },
    Chat { agent: AgentId, text: String },
    Leave { agent: AgentId },
}

#[derive(Clone)]
struct Hub {
    tx: mpsc::UnboundedSender<Inbound>,
}

/// A running server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    mission: JoinHandle<Result<MissionRecord, ServerError>>,
    http: JoinHandle<()>,
}

impl ServerHandle {
    /// Waits for the mission to end, then lets sessions drain and stops
    /// accepting connections.
    pub async fn finished(self) -> Result<MissionRecord, ServerError> {
        let record = self.mission.await.map_err(|_| ServerError::Aborted)?;
        tokio::time::sleep(Duration::from_millis(200)).await;
        self.http.abort();
        record
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })
}

pub async fn spawn(options: ServerOptions, listener: TcpListener) -> Result<ServerHandle, ServerError> {
    options.config.validate()?;
    let addr = listener.local_addr().map_err(|e| ServerError::Io(e.to_string()))?;
    let (tx, rx) = mpsc::unbounded_channel();
    let mut app = Router::new()
        .route("/play", get(upgrade))
        .with_state(Hub { tx });
    if let Some(dir) = &options.ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("game server stopped: {e}");
        }
    });
    let mission = tokio::spawn(TickLoop::new(options)?.run(rx));
    Ok(ServerHandle { addr, mission, http })
}

async fn upgrade(ws: WebSocketUpgrade, State(hub): State<Hub>) -> Response {
    ws.on_upgrade(move |socket| session(socket, hub))
}

fn error(code: ErrorCode, detail: impl Into<String>) -> ServerMessage {
    ServerMessage::Error {
        code,
        detail: detail.into(),
    }
}

async fn session(socket: WebSocket, hub: Hub) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Outbound>();
    let binary = Arc::new(AtomicBool::new(true));

    let mode = binary.clone();
    let writer = tokio::spawn(async move {
        let mut seq = Sequencer::new();
        // Replies made by the session itself carry no time; they reuse the
        // latest, which keeps sim_time non-decreasing on the wire.
        let mut now = 0.0f64;
        while let Some(out) = rx.recv().await {
            let (sim_time, msg) = match out {
                Outbound::Send { sim_time, msg } => (sim_time.max(now), msg),
                Outbound::Close => break,
            };
            now = sim_time;
            let last = matches!(msg, ServerMessage::MissionEnd { .. });
            let env = seq.wrap(sim_time, msg);
            let frame = if mode.load(Ordering::Relaxed) {
                Message::Binary(encode(&env).into())
            } else {
                Message::Text(serde_json::to_string(&env).expect("messages serialize").into())
            };
            if sink.send(frame).await.is_err() {
                return;
            }
            if last {
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    let reply = |msg: ServerMessage| {
        let _ = tx.send(Outbound::Send { sim_time: 0.0, msg });
    };
    let mut joined: Option<AgentId> = None;
    let mut last_seq: Option<u64> = None;
    while let Some(Ok(frame)) = stream.next().await {
        let decoded = match &frame {
            Message::Binary(bytes) => {
                binary.store(true, Ordering::Relaxed);
                decode::<ClientMessage>(bytes)
            }
            Message::Text(text) => {
                binary.store(false, Ordering::Relaxed);
                decode_json::<ClientMessage>(text.as_bytes())
            }
            Message::Close(_) => break,
            _ => continue,
        };
        let env: Envelope<ClientMessage> = match decoded {
            Ok(env) => env,
            Err(e) => {
                reply(error(e.code(), e.to_string()));
                continue;
            }
        };
        if last_seq.is_some_and(|s| env.seq <= s) {
            reply(error(
                ErrorCode::ProtocolViolation,
                format!("seq {} does not follow {}", env.seq, last_seq.unwrap_or(0)),
            ));
            continue;
        }
        last_seq = Some(env.seq);

        let Some(me) = joined.clone() else {
            if let ClientMessage::Join {
                name,
                kind,
                can_place,
            } = env.payload
            {
                let (done, accepted) = oneshot::channel();
                let sent = hub.tx.send(Inbound::Join {
                    name: name.clone(),
                    kind,
                    can_place,
                    outbox: tx.clone(),
                    reply: done,
                });
                if sent.is_ok() && accepted.await.unwrap_or(false) {
                    joined = Some(name);
                    continue;
                }
            } else {
                reply(error(ErrorCode::ProtocolViolation, "the first message must be join"));
            }
            let _ = tx.send(Outbound::Close);
            break;
        };
        let inbound = match env.payload {
            ClientMessage::Join { .. } => {
                reply(error(ErrorCode::ProtocolViolation, "already joined"));
                continue;
            }
            ClientMessage::Action { action } => Inbound::Action { agent: me, action },
            ClientMessage::Trace { trace } => Inbound::Trace { agent: me, trace },
            ClientMessage::Chat { text } => Inbound::Chat { agent: me, text },
            ClientMessage::Disconnect => break,
        };
        if hub.tx.send(inbound).is_err() {
            break;
        }
    }
    if let Some(agent) = joined {
        let _ = hub.tx.send(Inbound::Leave { agent });
    }
    drop(tx);
    let _ = tokio::time::timeout(Duration::from_secs(2), writer).await;
}

struct Member {
    kind: AgentKind,
    can_place: Option<bool>,
    outbox: Option<Outbox>,
}

struct Live {
    id: String,
    log: MissionLog,
    capture: Vec<WorldState>,
}

struct TickLoop {
    options: ServerOptions,
    world: WorldState,
    members: BTreeMap<AgentId, Member>,
    queues: BTreeMap<AgentId, VecDeque<ActionRequest>>,
    live: Option<Live>,
    ticks: u64,
}

impl TickLoop {
    fn new(options: ServerOptions) -> Result<Self, ServerError> {
        let world = WorldState::init(options.config.clone())?;
        Ok(Self {
            options,
            world,
            members: BTreeMap::new(),
            queues: BTreeMap::new(),
            live: None,
            ticks: 0,
        })
    }

    fn send(&self, to: &AgentId, msg: ServerMessage) {
        if let Some(out) = self.members.get(to).and_then(|m| m.outbox.as_ref()) {
            let _ = out.send(Outbound::Send {
                sim_time: self.world.clock(),
                msg,
            });
        }
    }

    fn send_all(&self, msg: &ServerMessage, except: Option<&AgentId>) {
        for (id, member) in &self.members {
            if Some(id) == except {
                continue;
            }
            if let Some(out) = &member.outbox {
                let _ = out.send(Outbound::Send {
                    sim_time: self.world.clock(),
                    msg: msg.clone(),
                });
            }
        }
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Inbound>) -> Result<MissionRecord, ServerError> {
        let dt = self.options.config.tick_seconds();
        let period = Duration::from_secs_f64(dt / self.options.speed.max(1e-6));
        let mut clock = tokio::time::interval(period);
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                msg = rx.recv() => match msg {
                    Some(msg) => self.handle(msg)?,
                    None => return Err(ServerError::Aborted),
                },
                _ = clock.tick(), if self.live.is_some() => {
                    if let Some(record) = self.tick(dt)? {
                        return Ok(record);
                    }
                }
            }
        }
    }

    fn handle(&mut self, msg: Inbound) -> Result<(), ServerError> {
        match msg {
            Inbound::Join {
                name,
                kind,
                can_place,
                outbox,
                reply,
            } => {
                let refusal = if self.members.contains_key(&name) {
                    Some(format!("agent id `{name}` is already in use"))
                } else if self.live.is_some() {
                    Some("the mission has already started".to_string())
                } else {
                    None
                };
                if let Some(detail) = refusal {
                    let _ = outbox.send(Outbound::Send {
                        sim_time: self.world.clock(),
                        msg: error(ErrorCode::JoinRejected, detail),
                    });
                    let _ = reply.send(false);
                    return Ok(());
                }
                tracing::info!(agent = %name, ?kind, "joined");
                self.members.insert(
                    name.clone(),
                    Member {
                        kind,
                        can_place,
                        outbox: Some(outbox),
                    },
                );
                let _ = reply.send(true);
                self.send(
                    &name,
                    ServerMessage::Joined {
                        agent_id: name.clone(),
                        kind,
                        mission: Box::new(self.options.config.clone()),
                    },
                );
                if mission_start_gate(self.members.values().map(|m| m.kind)) {
                    self.start()?;
                }
            }
            Inbound::Leave { agent } => {
                if self.live.is_none() {
                    // Before the start nothing is in the world yet.
                    self.members.remove(&agent);
                    return Ok(());
                }
                match self.members.get_mut(&agent) {
                    Some(m) if m.outbox.is_some() => m.outbox = None,
                    _ => return Ok(()),
                }
                tracing::info!(agent = %agent, "left");
                // The agent stays in the world, idle; the mission goes on.
                self.queues.remove(&agent);
                if let Some(a) = self.world.agents.get_mut(&agent) {
                    a.task = None;
                }
                let msg = error(ErrorCode::AgentLeft, format!("{agent} left the mission"));
                self.send_all(&msg, Some(&agent));
            }
            Inbound::Action { agent, action } => {
                if self.live.is_none() {
                    self.send(&agent, error(ErrorCode::ActionRejected, "the mission has not started"));
                } else {
                    self.queues.entry(agent).or_default().push_back(action);
                }
            }
            Inbound::Trace { agent, trace } => {
                if trace.agent != agent {
                    self.send(
                        &agent,
                        error(ErrorCode::ProtocolViolation, "traces must name the sending agent"),
                    );
                } else if let Some(live) = &mut self.live {
                    live.log.submit_trace(trace);
                }
            }
            Inbound::Chat { agent, text } => {
                if let Some(live) = &mut self.live {
                    live.log.submit_chat(agent.clone(), text.clone());
                }
                let msg = ServerMessage::Chat {
                    from: agent.clone(),
                    text,
                };
                self.send_all(&msg, Some(&agent));
            }
        }
        Ok(())
    }

    /// Places everyone in id order, opens the log and sends the first state.
    fn start(&mut self) -> Result<(), ServerError> {
        for (id, m) in &self.members {
            self.world.join(id.clone(), m.kind, m.can_place)?;
        }
        let now = chrono::Utc::now();
        let id = format!(
            "{}-live-{}",
            &self.options.config.digest()[..8],
            now.format("%Y%m%dT%H%M%S")
        );
        let log = MissionLog::open(id.clone(), &self.world, Some(now.to_rfc3339()))?;
        tracing::info!(mission = %id, "mission started");
        let capture = vec![self.world.clone(); log.events().len()];
        self.live = Some(Live { id, log, capture });
        self.broadcast_state();
        Ok(())
    }

    fn broadcast_state(&self) {
        self.send_all(&ServerMessage::StateUpdate(StateUpdate::from_world(&self.world)), None);
    }

    fn tick(&mut self, dt: f64) -> Result<Option<MissionRecord>, ServerError> {
        let live = self.live.as_mut().expect("ticks only run once started");
        if live.log.record(&self.world) {
            live.capture.push(self.world.clone());
        }
        // One queued action per agent per tick, oldest first.
        let mut actions = BTreeMap::new();
        for (id, queue) in &mut self.queues {
            if let Some(action) = queue.pop_front() {
                actions.insert(id.clone(), action);
            }
        }
        let report = self.world.step(&actions, dt)?;
        for r in report.rejections {
            self.send(&r.agent, error(ErrorCode::ActionRejected, r.error.to_string()));
        }
        self.ticks += 1;

        let outcome = self.world.check_termination();
        if outcome.status == MissionStatus::Ongoing {
            if self.ticks.is_multiple_of(u64::from(self.options.broadcast_every.max(1))) {
                self.broadcast_state();
            }
            return Ok(None);
        }
        let Live {
            id,
            log,
            mut capture,
        } = self.live.take().expect("checked above");
        let before = log.events().len();
        let timeline = log.close(&self.world, outcome)?;
        if timeline.events.len() > before {
            capture.push(self.world.clone());
        }
        let dir = MissionDir::new(&self.options.missions_dir, &id);
        write_mission(&dir, &timeline, &capture, &self.options.ai)?;
        tracing::info!(mission = %id, status = ?outcome.status, "mission ended");
        self.broadcast_state();
        self.send_all(&ServerMessage::MissionEnd { outcome }, None);
        for m in self.members.values_mut() {
            m.outbox = None;
        }
        Ok(Some(MissionRecord {
            id,
            outcome,
            dir: dir.root,
            events: timeline.events.len(),
        }))
    }
}

fn write_mission(
    dir: &MissionDir,
    timeline: &MissionTimeline,
    capture: &[WorldState],
    ai: &AiDescription,
) -> Result<(), ServerError> {
    let io = |e: std::io::Error| ServerError::Io(e.to_string());
    std::fs::create_dir_all(dir.frames_dir()).map_err(io)?;
    let context = match ai {
        AiDescription::Connected => MissionContextDoc::generate(timeline, AiProfile::Connected),
        AiDescription::DecisionTree(p) => MissionContextDoc::generate(timeline, AiProfile::DecisionTree(p)),
        AiDescription::Command => MissionContextDoc::generate(timeline, AiProfile::Command),
        AiDescription::Text(doc) => doc.clone(),
    };
    timeline
        .write(&dir.timeline_path())
        .map_err(|e| ServerError::Io(e.to_string()))?;
    std::fs::write(dir.context_path(), context.text()).map_err(io)?;
    write_capture(&dir.capture_path(), capture).map_err(|e| ServerError::Io(e.to_string()))
}

/// Loads the operator's context document, refusing blank files.
pub fn load_context_doc(path: &Path) -> Result<MissionContextDoc, ServerError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServerError::Io(format!("{}: {e}", path.display())))?;
    MissionContextDoc::from_text(text).ok_or_else(|| ServerError::Io(format!("{} is empty", path.display())))
}
