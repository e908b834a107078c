mod common;

use std::collections::BTreeSet;
use std::sync::LazyLock;

use common::{corrupt, id, joined_world, CORRUPTIONS};
use hmt_core::dt_agent::DecisionTreePolicy;
use hmt_core::episode::{run_episode, AiChoice, EpisodeResult};
use hmt_core::mission_log::{parse_bare_events, parse_timeline, LogError, MissionLog};
use hmt_core::replay::{extract_markers, reconstruct, MarkerKind, Replayer};
use hmt_core::{AgentKind, MissionConfig, WorldState};
use proptest::prelude::*;
use serde_json::Value;

static DT: LazyLock<EpisodeResult> = LazyLock::new(|| {
    run_episode(MissionConfig::default(), AiChoice::DecisionTree(DecisionTreePolicy::reference()), 5).unwrap()
});

static CMD: LazyLock<EpisodeResult> = LazyLock::new(|| {
    let commands = vec![
        (2.0, "get 4 wood and put it in the chest".to_string()),
        (20.0, "craft a pickaxe".to_string()),
        (30.0, "!mark checkpoint".to_string()),
    ];
    run_episode(
        MissionConfig::default(),
        AiChoice::Command { context: "Help out.\nforbid: place\n".into(), commands },
        9,
    )
    .unwrap()
});

#[test]
fn events_have_two_keys_and_ordered_times() {
    for run in [&*DT, &*CMD] {
        let root: Value = serde_json::from_slice(&run.timeline.to_json()).unwrap();
        let limit = run.timeline.header.config.time_limit_s;
        let mut prev = 0.0;
        for e in root["events"].as_array().unwrap() {
            let keys: Vec<&String> = e.as_object().unwrap().keys().collect();
            assert_eq!(keys, ["action", "timestamp"]);
            let t = e["timestamp"].as_f64().unwrap();
            assert!(t >= prev && t <= limit);
            prev = t;
        }
    }
}

#[test]
fn parse_and_serialize_are_inverse() {
    for run in [&*DT, &*CMD] {
        let bytes = run.timeline.to_json();
        let parsed = parse_timeline(&bytes).unwrap();
        assert_eq!(parsed, run.timeline);
        assert_eq!(parsed.to_json(), bytes);
        let bare = run.timeline.to_bare_json();
        assert_eq!(parse_bare_events(&bare).unwrap(), run.timeline.events);
    }
}

#[test]
fn every_trace_is_logged_exactly_once() {
    let run = &*DT;
    let traces: Vec<_> = run.timeline.traces().collect();
    assert_eq!(traces.len() as u64, run.ai_decisions.unwrap());
    let distinct: BTreeSet<String> = traces.iter().map(|(_, t)| serde_json::to_string(t).unwrap()).collect();
    assert_eq!(distinct.len(), traces.len());
    // A trace is logged at the tick it was made.
    assert!(traces.iter().all(|(ts, t)| (ts - t.sim_time).abs() < 1e-9));
}

#[test]
fn log_waits_for_both_kinds() {
    let mut world = WorldState::init(MissionConfig::default()).unwrap();
    world.join(id("human"), AgentKind::Human, None).unwrap();
    assert!(matches!(MissionLog::open("m", &world, None), Err(LogError::GateClosed)));
    world.join(id("other"), AgentKind::Human, None).unwrap();
    assert!(matches!(MissionLog::open("m", &world, None), Err(LogError::GateClosed)));
    world.join(id("ai"), AgentKind::Ai, None).unwrap();
    assert!(MissionLog::open("m", &world, None).is_ok());
}

#[test]
fn replay_rebuilds_every_captured_state() {
    for run in [&*DT, &*CMD] {
        assert_eq!(run.capture.len(), run.timeline.events.len());
        let mut replayer = Replayer::new(&run.timeline).unwrap();
        for (i, e) in run.timeline.events.iter().enumerate() {
            let snap = replayer.seek(e.timestamp).unwrap();
            assert_eq!(snap.world.to_json(), run.capture[i].to_json(), "event {i}");
        }
        // From scratch, on a sample.
        for (i, e) in run.timeline.events.iter().enumerate().step_by(97) {
            assert_eq!(reconstruct(&run.timeline, e.timestamp).unwrap().world, run.capture[i], "event {i}");
        }
    }
}

#[test]
fn markers_sit_on_events() {
    for run in [&*DT, &*CMD] {
        let times: Vec<f64> = run.timeline.events.iter().map(|e| e.timestamp).collect();
        let markers = extract_markers(&run.timeline, &MarkerKind::ALL);
        assert!(!markers.is_empty());
        for m in &markers {
            assert_eq!(times[m.event], m.t);
        }
        assert!(markers.windows(2).all(|w| w[0].t <= w[1].t));
    }
    let kinds: BTreeSet<MarkerKind> = extract_markers(&CMD.timeline, &MarkerKind::ALL).iter().map(|m| m.kind).collect();
    assert!(kinds.contains(&MarkerKind::Chat));
    assert!(kinds.contains(&MarkerKind::Custom));
    let dt_kinds: BTreeSet<MarkerKind> = extract_markers(&DT.timeline, &MarkerKind::ALL).iter().map(|m| m.kind).collect();
    assert!(dt_kinds.contains(&MarkerKind::PhaseChange));
    assert!(dt_kinds.contains(&MarkerKind::DecisionPoint));
    assert!(dt_kinds.contains(&MarkerKind::BlockPlaced));
}

#[test]
fn headless_gate_opens_at_time_zero() {
    let world = joined_world(MissionConfig::default());
    assert!(world.has_started());
    assert_eq!(DT.timeline.events[0].timestamp, 0.0);
    assert_eq!(DT.timeline.header.roster.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrupted_files_are_rejected(how in 0u8..CORRUPTIONS, at in any::<usize>()) {
        let mut root: Value = serde_json::from_slice(&DT.timeline.to_json()).unwrap();
        corrupt(&mut root, how, at);
        let bytes = serde_json::to_vec(&root).unwrap();
        prop_assert!(parse_timeline(&bytes).is_err(), "mutation {} survived", how);
    }

    #[test]
    fn truncated_files_are_rejected(keep in 0.0f64..0.999) {
        let bytes = DT.timeline.to_json();
        let cut = (bytes.len() as f64 * keep) as usize;
        prop_assert!(parse_timeline(&bytes[..cut]).is_err());
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn incremental_seek_equals_fresh_reconstruction(ts in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let tl = &DT.timeline;
        let end = tl.end_time();
        let mut replayer = Replayer::new(tl).unwrap();
        for f in ts {
            let t = f * end;
            prop_assert_eq!(replayer.seek(t).unwrap(), reconstruct(tl, t).unwrap());
        }
    }
}
