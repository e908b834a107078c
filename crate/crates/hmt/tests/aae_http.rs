use std::path::Path;
use std::sync::Arc;

use hmt::aae_http::router;
use hmt_core::aae::{AaeService, AiProfile, MissionContextDoc, MissionStore, SessionStore};
use hmt_core::dt_agent::DecisionTreePolicy;
use hmt_core::episode::{run_episode, AiChoice, MissionDir};
use hmt_core::llm::{LanguageModel, MockLlm, MockScript};
use hmt_core::replay::{extract_markers, MarkerKind, CELL_PX};
use hmt_core::MissionConfig;
use serde_json::{json, Value};

fn record_mission(root: &Path) -> (String, hmt_core::mission_log::MissionTimeline) {
    let policy = DecisionTreePolicy::reference();
    let run = run_episode(MissionConfig::default(), AiChoice::DecisionTree(policy.clone()), 7).unwrap();
    let ctx = MissionContextDoc::generate(&run.timeline, AiProfile::DecisionTree(&policy));
    MissionDir::new(root, &run.timeline.header.mission_id).write(&run, &ctx).unwrap();
    (run.timeline.header.mission_id.clone(), run.timeline)
}

async fn serve(root: &Path, llm: impl LanguageModel + 'static) -> String {
    let service = AaeService::new(MissionStore::new(root), SessionStore::in_memory(), Arc::new(llm));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(service)).await.unwrap() });
    format!("http://{addr}")
}

/// Phase of the latest trace at or before `t`, read straight from the timeline.
fn phase_oracle(timeline: &hmt_core::mission_log::MissionTimeline, t: f64) -> u8 {
    timeline
        .traces()
        .filter(|(ts, _)| *ts <= t)
        .last()
        .map_or(1, |(_, tr)| tr.phase)
}

#[tokio::test]
async fn read_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (id, timeline) = record_mission(dir.path());
    let base = serve(dir.path(), MockLlm::phase_lookup()).await;
    let http = reqwest::Client::new();

    let list: Value = http.get(format!("{base}/missions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list[0]["id"], id.as_str());
    assert_eq!(list[0]["status"], "success");

    let bytes = http.get(format!("{base}/missions/{id}/timeline")).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(bytes.as_ref(), std::fs::read(dir.path().join(&id).join("timeline.json")).unwrap());

    let ctx = http.get(format!("{base}/missions/{id}/context")).send().await.unwrap();
    assert!(ctx.headers()["content-type"].to_str().unwrap().starts_with("text/markdown"));
    assert!(ctx.text().await.unwrap().contains("## Phases"));

    let got: Value = http
        .get(format!("{base}/missions/{id}/markers?kinds=phase_change,chat"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let want = extract_markers(&timeline, &[MarkerKind::PhaseChange, MarkerKind::Chat]);
    assert_eq!(got, serde_json::to_value(&want).unwrap());
    assert!(!want.is_empty());

    let bad = http.get(format!("{base}/missions/{id}/markers?kinds=bogus")).send().await.unwrap();
    assert_eq!(bad.status(), 400);
    assert_eq!(bad.json::<Value>().await.unwrap()["error"], "bad-request");

    let png = http
        .get(format!("{base}/missions/{id}/frame?t=30&view=topdown"))
        .send()
        .await
        .unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    let png = png.bytes().await.unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let width = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(png[20..24].try_into().unwrap());
    let c = &timeline.header.config;
    assert_eq!((width, height), (c.width as u32 * CELL_PX, c.height as u32 * CELL_PX));

    let ego = http.get(format!("{base}/missions/{id}/frame?t=30&view=ai")).send().await.unwrap();
    assert_eq!(ego.status(), 200);
    let late = http.get(format!("{base}/missions/{id}/frame?t=9999")).send().await.unwrap();
    assert_eq!(late.status(), 400);
    let missing = http.get(format!("{base}/missions/nope/timeline")).send().await.unwrap();
    assert_eq!(missing.status(), 404);
    assert_eq!(missing.json::<Value>().await.unwrap()["error"], "mission-not-found");
    let sneaky = http.get(format!("{base}/missions/..%2F..%2Fetc/context")).send().await.unwrap();
    assert_eq!(sneaky.status(), 404);
}

#[tokio::test]
async fn chat_round_trip_through_mock() {
    let dir = tempfile::tempdir().unwrap();
    let (id, timeline) = record_mission(dir.path());
    let base = serve(dir.path(), MockLlm::phase_lookup()).await;
    let http = reqwest::Client::new();

    let unknown = http.post(format!("{base}/sessions")).json(&json!({"mission_id": "ghost"})).send().await.unwrap();
    assert_eq!(unknown.status(), 404);

    let created = http.post(format!("{base}/sessions")).json(&json!({"mission_id": id})).send().await.unwrap();
    assert_eq!(created.status(), 201);
    let session: Value = created.json().await.unwrap();
    let sid = session["id"].as_str().unwrap().to_string();
    assert_eq!(session["history"], json!([]));

    for (n, t) in [40.0, 75.5].into_iter().enumerate() {
        let answer: Value = http
            .post(format!("{base}/sessions/{sid}/query"))
            .json(&json!({"text": "What phase is the AI in?", "playhead_s": t}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let text = answer["answer"].as_str().unwrap();
        assert!(text.contains(&format!("phase {}", phase_oracle(&timeline, t))), "{text}");
        assert_eq!(answer["history_len"], 2 * (n + 1));
    }

    let empty = http
        .post(format!("{base}/sessions/{sid}/query"))
        .json(&json!({"text": "  ", "playhead_s": 1.0}))
        .send()
        .await
        .unwrap();
    assert_eq!(empty.status(), 400);
    assert_eq!(empty.json::<Value>().await.unwrap()["error"], "empty-query");

    let gone = http
        .post(format!("{base}/sessions/s-ffffffff/query"))
        .json(&json!({"text": "hi", "playhead_s": 1.0}))
        .send()
        .await
        .unwrap();
    assert_eq!(gone.status(), 404);
}

#[tokio::test]
async fn llm_outage_leaves_history_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (id, _) = record_mission(dir.path());
    let down = MockLlm::new(MockScript {
        unavailable: true,
        ..MockScript::default()
    });
    let base = serve(dir.path(), down).await;
    let http = reqwest::Client::new();
    let session: Value = http
        .post(format!("{base}/sessions"))
        .json(&json!({"mission_id": id}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let sid = session["id"].as_str().unwrap();
    let r = http
        .post(format!("{base}/sessions/{sid}/query"))
        .json(&json!({"text": "why?", "playhead_s": 3.0}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 503);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "llm-unavailable");
    let after: Value = http.get(format!("{base}/sessions/{sid}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(after["history"], json!([]));
}
