use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmt_core::mission_log::{parse_bare_events, MissionTimeline};
use hmt_core::{MissionConfig, MissionStatus};
use serde_json::Value;

fn hmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_config_is_the_default() {
    let loaded = MissionConfig::load(&configs().join("default.toml")).unwrap();
    assert_eq!(loaded, MissionConfig::default());
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let o = hmt(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["serve", "episode", "aae", "agent", "export"] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
    let o = hmt(&["episode", "--help"]);
    for flag in ["--config", "--seed", "--ai", "--missions"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
    let o = hmt(&["aae", "--help"]);
    for flag in ["--mock-llm", "--persist-dir", "--port"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
    let o = hmt(&["agent", "cmd", "--help"]);
    for flag in ["--server", "--context", "--llm", "--rules-only"] {
        assert!(stdout(&o).contains(flag), "{flag}");
    }
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let o = hmt(&["episode", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = hmt(&["episode", "--ai", "telepathy"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let o = hmt(&["episode", "--config", "/no/such/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/config.toml"));
}

#[test]
fn episode_export_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let missions = dir.path().join("missions");
    let config = configs().join("default.toml");
    let o = hmt(&[
        "episode",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "7",
        "--missions",
        missions.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Success"), "{}", stdout(&o));

    let ids: Vec<_> = std::fs::read_dir(&missions).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(ids.len(), 1);
    let mission = &ids[0];
    for f in ["timeline.json", "context.md", "capture.bin"] {
        assert!(mission.join(f).is_file(), "{f}");
    }
    assert!(mission.join("frames").is_dir());
    let timeline = MissionTimeline::load(&mission.join("timeline.json")).unwrap();
    assert_eq!(timeline.footer.unwrap().status, MissionStatus::Success);

    // Same inputs, same bytes.
    let again = dir.path().join("again");
    let o = hmt(&["episode", "--seed", "7", "--missions", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let twin = again.join(mission.file_name().unwrap()).join("timeline.json");
    assert_eq!(std::fs::read(twin).unwrap(), std::fs::read(mission.join("timeline.json")).unwrap());

    let bare = dir.path().join("bare.json");
    let o = hmt(&[
        "export",
        "--mission",
        mission.to_str().unwrap(),
        "--out",
        bare.to_str().unwrap(),
        "--bare-array",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&bare).unwrap();
    let root: Value = serde_json::from_slice(&bytes).unwrap();
    let events = root.as_array().expect("root is an array");
    assert_eq!(events.len(), timeline.events.len());
    for e in events {
        let keys: Vec<&String> = e.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["action", "timestamp"]);
    }
    assert_eq!(parse_bare_events(&bytes).unwrap(), timeline.events);

    let o = hmt(&["render", "--mission", mission.to_str().unwrap(), "--every", "30"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let frames = std::fs::read_dir(mission.join("frames")).unwrap().count();
    assert_eq!(frames, 3, "t = 0, 30, 60");
}

#[test]
fn ablation_fails_at_the_time_limit() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmt(&["episode", "--ai", "none", "--seed", "7", "--missions", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "a failed mission is still a clean run");
    assert!(stdout(&o).contains("Failure at 90.00 s"), "{}", stdout(&o));
}

#[test]
fn command_episode_uses_the_commands_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = hmt(&[
        "episode",
        "--ai",
        "cmd",
        "--agent-context",
        configs().join("agent-context.md").to_str().unwrap(),
        "--commands",
        configs().join("commands.txt").to_str().unwrap(),
        "--missions",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mission = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let timeline = MissionTimeline::load(&mission.join("timeline.json")).unwrap();
    let chat: Vec<String> = timeline
        .events
        .iter()
        .flat_map(|e| e.action.chat.iter().map(|c| c.text.clone()))
        .collect();
    assert!(chat.iter().any(|t| t == "craft a pickaxe"));
    assert!(chat.iter().any(|t| t.starts_with("On it")), "{chat:?}");
    let context = std::fs::read_to_string(mission.join("context.md")).unwrap();
    assert!(context.contains("follows chat commands"));
}
