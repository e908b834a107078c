use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use hmt::client::{run_agent, Connection};
use hmt::server::{self, ServerHandle, ServerOptions};
use hmt_core::dt_agent::{DecisionTreePolicy, DtAgent};
use hmt_core::episode::ScriptedHuman;
use hmt_core::mission_log::MissionTimeline;
use hmt_core::protocol::{ActionRequest, ClientMessage, ErrorCode, ServerMessage};
use hmt_core::{AgentId, AgentKind, MissionConfig, MissionStatus};
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;

fn short_mission(limit: f64) -> MissionConfig {
    let mut c = MissionConfig::default();
    c.time_limit_s = limit;
    c.collaboration.required = false;
    c
}

async fn start(config: MissionConfig, speed: f64, dir: &std::path::Path) -> (ServerHandle, String) {
    let listener = server::bind("127.0.0.1:0").await.unwrap();
    let options = ServerOptions {
        speed,
        ..ServerOptions::new(config, dir)
    };
    let handle = server::spawn(options, listener).await.unwrap();
    let url = format!("ws://{}/play", handle.addr);
    (handle, url)
}

fn id(s: &str) -> AgentId {
    AgentId::new(s).unwrap()
}

fn join(name: &str, kind: AgentKind) -> ClientMessage {
    ClientMessage::Join {
        name: id(name),
        kind,
        can_place: None,
    }
}

async fn next(conn: &mut Connection) -> Option<ServerMessage> {
    timeout(Duration::from_secs(10), conn.recv())
        .await
        .expect("server answered in time")
        .unwrap()
        .map(|e| e.payload)
}

async fn next_state(conn: &mut Connection) -> hmt_core::protocol::StateUpdate {
    loop {
        match next(conn).await {
            Some(ServerMessage::StateUpdate(u)) => return u,
            Some(_) => continue,
            None => panic!("closed while waiting for state"),
        }
    }
}

#[tokio::test]
async fn action_before_join_is_a_protocol_violation() {
    let dir = tempfile::tempdir().unwrap();
    let (_h, url) = start(short_mission(5.0), 10.0, dir.path()).await;
    let mut c = Connection::connect(&url).await.unwrap();
    c.send(ClientMessage::Action {
        action: ActionRequest::Idle,
    })
    .await
    .unwrap();
    match next(&mut c).await {
        Some(ServerMessage::Error { code, .. }) => assert_eq!(code, ErrorCode::ProtocolViolation),
        other => panic!("{other:?}"),
    }
    assert_eq!(next(&mut c).await, None, "connection closes after the violation");
}

#[tokio::test]
async fn duplicate_id_is_rejected_and_first_session_kept() {
    let dir = tempfile::tempdir().unwrap();
    let (_h, url) = start(short_mission(5.0), 10.0, dir.path()).await;
    let mut first = Connection::connect(&url).await.unwrap();
    first.send(join("alice", AgentKind::Human)).await.unwrap();
    assert!(matches!(next(&mut first).await, Some(ServerMessage::Joined { .. })));

    let mut dup = Connection::connect(&url).await.unwrap();
    dup.send(join("alice", AgentKind::Human)).await.unwrap();
    match next(&mut dup).await {
        Some(ServerMessage::Error { code, .. }) => assert_eq!(code, ErrorCode::JoinRejected),
        other => panic!("{other:?}"),
    }
    assert_eq!(next(&mut dup).await, None);

    // The original session still starts the mission with an AI.
    let mut ai = Connection::connect(&url).await.unwrap();
    ai.send(join("bot", AgentKind::Ai)).await.unwrap();
    let u = next_state(&mut first).await;
    assert_eq!(u.agents.len(), 2);
}

#[tokio::test]
async fn no_state_before_start_and_identical_streams_after() {
    let dir = tempfile::tempdir().unwrap();
    let (_h, url) = start(short_mission(3.0), 10.0, dir.path()).await;
    let mut human = Connection::connect(&url).await.unwrap();
    human.send(join("human", AgentKind::Human)).await.unwrap();
    assert!(matches!(next(&mut human).await, Some(ServerMessage::Joined { .. })));
    // Alone, the human hears nothing.
    assert!(timeout(Duration::from_millis(300), human.recv()).await.is_err());

    let mut ai = Connection::connect(&url).await.unwrap();
    ai.send(join("ai", AgentKind::Ai)).await.unwrap();
    assert!(matches!(next(&mut ai).await, Some(ServerMessage::Joined { .. })));
    ai.send(ClientMessage::Action {
        action: ActionRequest::MoveTo {
            target: hmt_core::Cell::new(10, 16),
        },
    })
    .await
    .unwrap();

    let mut streams = [Vec::new(), Vec::new()];
    for (i, conn) in [&mut human, &mut ai].into_iter().enumerate() {
        let mut last_seq = None;
        let mut last_time = 0.0;
        loop {
            let env = timeout(Duration::from_secs(10), conn.recv()).await.unwrap().unwrap();
            let Some(env) = env else { break };
            assert!(last_seq.is_none_or(|s| env.seq > s));
            assert!(env.sim_time >= last_time);
            last_seq = Some(env.seq);
            last_time = env.sim_time;
            match env.payload {
                ServerMessage::StateUpdate(u) => streams[i].push(u),
                ServerMessage::MissionEnd { .. } => {
                    // Nothing follows mission_end but the close.
                    assert!(conn.recv().await.unwrap().is_none());
                    break;
                }
                _ => {}
            }
        }
    }
    assert!(streams[0].len() >= 60, "one update per tick");
    assert_eq!(streams[0], streams[1]);
    let moved = streams[0].iter().any(|u| u.agent(&id("ai")).unwrap().position.cell() != streams[0][0].agent(&id("ai")).unwrap().position.cell());
    assert!(moved);
}

#[tokio::test]
async fn ai_disconnect_notifies_human_and_mission_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (h, url) = start(short_mission(3.0), 10.0, dir.path()).await;
    let mut human = Connection::connect(&url).await.unwrap();
    human.send(join("human", AgentKind::Human)).await.unwrap();
    let mut ai = Connection::connect(&url).await.unwrap();
    ai.send(join("ai", AgentKind::Ai)).await.unwrap();
    next_state(&mut human).await;
    ai.abort().await;

    let mut saw_left = false;
    let mut after_left = 0;
    let mut ended = None;
    while let Some(msg) = next(&mut human).await {
        match msg {
            ServerMessage::Error {
                code: ErrorCode::AgentLeft,
                detail,
            } => {
                assert!(detail.contains("ai"));
                saw_left = true;
            }
            ServerMessage::StateUpdate(u) if saw_left => {
                after_left += 1;
                assert_eq!(u.agents.len(), 2, "the AI stays in the world");
            }
            ServerMessage::MissionEnd { outcome } => ended = Some(outcome),
            _ => {}
        }
    }
    assert!(saw_left);
    assert!(after_left > 10);
    assert_eq!(ended.unwrap().status, MissionStatus::Failure);
    let record = h.finished().await.unwrap();
    assert!(record.dir.join("timeline.json").is_file());
}

#[tokio::test]
async fn malformed_frame_keeps_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let (_h, url) = start(short_mission(5.0), 10.0, dir.path()).await;
    let mut c = Connection::connect(&url).await.unwrap();
    c.send_raw(vec![0, 0, 0, 9, b'{']).await.unwrap();
    match next(&mut c).await {
        Some(ServerMessage::Error { code, .. }) => assert_eq!(code, ErrorCode::MalformedFrame),
        other => panic!("{other:?}"),
    }
    c.send(join("alice", AgentKind::Human)).await.unwrap();
    assert!(matches!(next(&mut c).await, Some(ServerMessage::Joined { .. })));
}

#[tokio::test]
async fn text_clients_get_text_replies() {
    let dir = tempfile::tempdir().unwrap();
    let (_h, url) = start(short_mission(5.0), 10.0, dir.path()).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let join = r#"{"v":1,"seq":0,"sim_time":0,"payload":{"type":"join","name":"web","kind":"human"}}"#;
    ws.send(Message::Text(join.into())).await.unwrap();
    let reply = timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
    let Message::Text(text) = reply else { panic!("{reply:?}") };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["v"], 1);
    assert_eq!(v["payload"]["type"], "joined");
    assert_eq!(v["payload"]["agent_id"], "web");
}

#[tokio::test]
async fn scripted_human_and_dt_agent_finish_a_live_mission() {
    let dir = tempfile::tempdir().unwrap();
    let (h, url) = start(short_mission(12.0), 40.0, dir.path()).await;
    let human_url = url.clone();
    let human = tokio::spawn(async move {
        let mut agent = ScriptedHuman::new(id("human"), 7);
        run_agent(Connection::connect(&human_url).await.unwrap(), &mut agent, None).await
    });
    let mut dt = DtAgent::new(id("ai"), DecisionTreePolicy::reference());
    let summary = run_agent(Connection::connect(&url).await.unwrap(), &mut dt, None)
        .await
        .unwrap();
    assert!(summary.updates > 100);
    assert!(dt.decisions() > 0);
    human.await.unwrap().unwrap();

    let record = h.finished().await.unwrap();
    assert_eq!(record.outcome, summary.outcome);
    let timeline = MissionTimeline::load(&record.dir.join("timeline.json")).unwrap();
    assert_eq!(timeline.footer, Some(summary.outcome));
    assert!(timeline.traces().count() > 0, "traces sent over the wire are logged");
    assert!(timeline.header.start_time.is_some());
    let context = std::fs::read_to_string(record.dir.join("context.md")).unwrap();
    assert!(context.contains("## Team"));
    assert!(record.dir.join("capture.bin").is_file());
}
