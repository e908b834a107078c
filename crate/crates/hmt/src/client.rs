//! WebSocket client side: a framed connection to `/play` and a runner that
//! drives any in-world controller from the server's broadcasts.

use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use hmt_core::command_agent::{CommandAgent, InterpretJob, Interpretation, RuleParser};
use hmt_core::dt_agent::DtAgent;
use hmt_core::episode::{IdleAgent, ScriptedHuman};
use hmt_core::llm::LanguageModel;
use hmt_core::protocol::{
    decode, encode, ClientMessage, Envelope, ErrorCode, ProtocolError, Sequencer, ServerMessage,
};
use hmt_core::skills::{Controller, Observation};
use hmt_core::{MissionConfig, MissionOutcome};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("join rejected: {0}")]
    JoinRejected(String),
    #[error("connection closed before the mission ended")]
    Closed,
    #[error("unexpected message before join completed: {0}")]
    Unexpected(String),
}

/// One `/play` connection speaking binary frames.
pub struct Connection {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: Sequencer,
    sim_time: f64,
}

impl Connection {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = connect_async(url).await?;
        Ok(Self {
            ws,
            seq: Sequencer::new(),
            sim_time: 0.0,
        })
    }

    pub async fn send(&mut self, msg: ClientMessage) -> Result<(), ClientError> {
        let env = self.seq.wrap(self.sim_time, msg);
        self.ws.send(Message::Binary(encode(&env).into())).await?;
        Ok(())
    }

    /// Sends raw bytes as one binary message, for tests of bad input.
    pub async fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), ClientError> {
        self.ws.send(Message::Binary(bytes.into())).await?;
        Ok(())
    }

    /// Next server message; `None` once the server closed the connection.
    pub async fn recv(&mut self) -> Result<Option<Envelope<ServerMessage>>, ClientError> {
        while let Some(msg) = self.ws.next().await {
            let env = match msg? {
                Message::Binary(bytes) => decode::<ServerMessage>(&bytes)?,
                Message::Text(text) => hmt_core::protocol::decode_json(text.as_bytes())?,
                Message::Close(_) => return Ok(None),
                _ => continue,
            };
            self.sim_time = self.sim_time.max(env.sim_time);
            return Ok(Some(env));
        }
        Ok(None)
    }

    /// Drops the connection without a disconnect message.
    pub async fn abort(mut self) {
        let _ = self.ws.close(None).await;
    }

    /// Sends `disconnect` and closes.
    pub async fn disconnect(mut self) -> Result<(), ClientError> {
        self.send(ClientMessage::Disconnect).await?;
        let _ = self.ws.close(None).await;
        Ok(())
    }
}

/// A controller that can run against the live server. Agents that interpret
/// commands hand the slow part to the runner so broadcasts keep flowing.
pub trait RemoteAgent: Controller + Send {
    fn take_jobs(&mut self, _obs: &Observation<'_>) -> Vec<InterpretJob> {
        Vec::new()
    }

    fn accept(&mut self, _result: Interpretation, _now: f64) {}
}

impl RemoteAgent for DtAgent {}
impl RemoteAgent for ScriptedHuman {}
impl RemoteAgent for IdleAgent {}

impl RemoteAgent for CommandAgent {
    fn take_jobs(&mut self, obs: &Observation<'_>) -> Vec<InterpretJob> {
        CommandAgent::take_jobs(self, obs)
    }

    fn accept(&mut self, result: Interpretation, now: f64) {
        CommandAgent::accept(self, result, now);
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub outcome: MissionOutcome,
    pub updates: u64,
    pub actions_sent: u64,
}

/// Joins, then answers every state update until the mission ends.
pub async fn run_agent<A: RemoteAgent>(
    mut conn: Connection,
    agent: &mut A,
    llm: Option<Arc<dyn LanguageModel>>,
) -> Result<RunSummary, ClientError> {
    conn.send(ClientMessage::Join {
        name: agent.id().clone(),
        kind: agent.kind(),
        can_place: agent.can_place(),
    })
    .await?;
    let mission: MissionConfig = match conn.recv().await?.map(|e| e.payload) {
        Some(ServerMessage::Joined { mission, .. }) => *mission,
        Some(ServerMessage::Error { detail, .. }) => return Err(ClientError::JoinRejected(detail)),
        Some(other) => return Err(ClientError::Unexpected(format!("{other:?}"))),
        None => return Err(ClientError::Closed),
    };
    tracing::info!(agent = %agent.id(), "joined");

    let (done_tx, mut done_rx) = mpsc::unbounded_channel::<Interpretation>();
    let parser = RuleParser::default();
    let (mut updates, mut actions_sent) = (0, 0);
    let mut now = 0.0;
    loop {
        tokio::select! {
            Some(result) = done_rx.recv() => agent.accept(result, now),
            env = conn.recv() => {
                let Some(env) = env? else { return Err(ClientError::Closed) };
                now = env.sim_time;
                match env.payload {
                    ServerMessage::StateUpdate(update) => {
                        updates += 1;
                        let me = agent.id().clone();
                        let obs = Observation { me: &me, mission: &mission, update: &update };
                        for job in agent.take_jobs(&obs) {
                            let llm = llm.clone();
                            let parser = parser.clone();
                            let tx = done_tx.clone();
                            tokio::task::spawn_blocking(move || {
                                let _ = tx.send(job.run(llm.as_deref(), &parser));
                            });
                        }
                        let out = agent.on_update(&obs);
                        for trace in out.traces {
                            conn.send(ClientMessage::Trace { trace }).await?;
                        }
                        for text in out.chat {
                            conn.send(ClientMessage::Chat { text }).await?;
                        }
                        if let Some(action) = out.action {
                            actions_sent += 1;
                            conn.send(ClientMessage::Action { action }).await?;
                        }
                    }
                    ServerMessage::Chat { from, text } => agent.on_chat(&from, &text, now),
                    ServerMessage::MissionEnd { outcome } => {
                        return Ok(RunSummary { outcome, updates, actions_sent });
                    }
                    ServerMessage::Error { code: ErrorCode::AgentLeft, detail } => tracing::info!("{detail}"),
                    ServerMessage::Error { code, detail } => tracing::warn!(?code, "{detail}"),
                    ServerMessage::Joined { .. } => {}
                }
            }
        }
    }
}
