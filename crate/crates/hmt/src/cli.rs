//! The `hmt` command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hmt_core::aae::{AaeService, AiProfile, MissionContextDoc, MissionStore, SessionStore};
use hmt_core::command_agent::{load_context_file, CommandAgent};
use hmt_core::dt_agent::{DecisionTreePolicy, DtAgent};
use hmt_core::episode::{run_episode, AiChoice, MissionDir, ScriptedHuman, AI_ID, HUMAN_ID};
use hmt_core::llm::{LanguageModel, MockLlm, MockScript, Unreachable};
use hmt_core::mission_log::MissionTimeline;
use hmt_core::replay::{render_png, Replayer, Viewpoint};
use hmt_core::{AgentId, MissionConfig};

use crate::client::{run_agent, Connection, RemoteAgent, RunSummary};
use crate::remote_llm::RemoteLlm;
use crate::server::{self, AiDescription, ServerOptions};
use crate::{aae_http, server::load_context_doc};

#[derive(Debug, Parser)]
#[command(name = "hmt", version, about = "Human-machine teaming testbed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the live game server (WebSocket `/play`) for one mission.
    Serve(ServeArgs),
    /// Run one headless episode with the scripted human and write it to the missions directory.
    Episode(EpisodeArgs),
    /// Run the after-action explanation HTTP service.
    Aae(AaeArgs),
    /// Connect an agent process to a running game server.
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Copy a mission timeline, optionally as a bare event array.
    Export(ExportArgs),
    /// Render replay frames of a recorded mission as PNG files.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Mission config (TOML); the built-in default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for spawn placement.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    pub port: u16,
    /// Where finished missions are written.
    #[arg(long, default_value = "missions")]
    pub missions: PathBuf,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Ticks between state broadcasts.
    #[arg(long, default_value_t = 1)]
    pub broadcast_every: u32,
    /// Static web client to serve alongside `/play`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Mission context document to store instead of the generated one.
    #[arg(long, conflicts_with = "policy")]
    pub context_file: Option<PathBuf>,
    /// Decision-tree policy the AI will run, described in the generated context.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AiArg {
    Dt,
    Cmd,
    None,
}

#[derive(Debug, Args)]
pub struct EpisodeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = AiArg::Dt)]
    pub ai: AiArg,
    /// Decision-tree policy for `--ai dt`; the reference policy when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Context file for `--ai cmd`.
    #[arg(long)]
    pub agent_context: Option<PathBuf>,
    /// Commands the scripted human sends for `--ai cmd`, one `<seconds> <text>` per line.
    #[arg(long)]
    pub commands: Option<PathBuf>,
    #[arg(long, default_value = "missions")]
    pub missions: PathBuf,
}

#[derive(Debug, Args)]
pub struct AaeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = aae_http::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "missions")]
    pub missions: PathBuf,
    /// Answer from a scripted mock model instead of LLM_ENDPOINT.
    #[arg(long)]
    pub mock_llm: Option<PathBuf>,
    /// Keep chat sessions in this directory across restarts.
    #[arg(long)]
    pub persist_dir: Option<PathBuf>,
    /// Prompt budget in estimated tokens before the timeline is windowed.
    #[arg(long, default_value_t = hmt_core::aae::DEFAULT_TOKEN_BUDGET)]
    pub budget_tokens: usize,
}

#[derive(Debug, Subcommand)]
pub enum AgentCommand {
    /// Decision-tree teammate.
    Dt(DtAgentArgs),
    /// Command-following teammate.
    Cmd(CmdAgentArgs),
    /// Scripted human stand-in.
    Human(HumanAgentArgs),
}

#[derive(Debug, Args)]
pub struct Connect {
    /// Game server WebSocket URL.
    #[arg(long, default_value = "ws://127.0.0.1:8400/play")]
    pub server: String,
}

#[derive(Debug, Args)]
pub struct DtAgentArgs {
    #[command(flatten)]
    pub connect: Connect,
    #[arg(long, default_value = AI_ID)]
    pub name: String,
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CmdAgentArgs {
    #[command(flatten)]
    pub connect: Connect,
    #[arg(long, default_value = AI_ID)]
    pub name: String,
    /// Agent context file: free text plus optional `forbid:` lines.
    #[arg(long)]
    pub context: PathBuf,
    /// Interpret commands with the model at LLM_ENDPOINT, falling back to rules.
    #[arg(long, conflicts_with = "rules_only")]
    pub llm: bool,
    /// Interpret commands with the rule parser only.
    #[arg(long)]
    pub rules_only: bool,
    /// Interpret with a scripted mock model.
    #[arg(long, conflicts_with_all = ["llm", "rules_only"])]
    pub mock_llm: Option<PathBuf>,
    /// Where to save the conversation record when the mission ends.
    #[arg(long)]
    pub conversation_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HumanAgentArgs {
    #[command(flatten)]
    pub connect: Connect,
    #[arg(long, default_value = HUMAN_ID)]
    pub name: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Mission directory holding `timeline.json`.
    #[arg(long, conflicts_with = "timeline", required_unless_present = "timeline")]
    pub mission: Option<PathBuf>,
    /// Timeline file.
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write only the event array, the root element being that array.
    #[arg(long)]
    pub bare_array: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mission: PathBuf,
    /// Seconds between frames.
    #[arg(long, default_value_t = 1.0)]
    pub every: f64,
    /// `topdown` or an agent id.
    #[arg(long, default_value = "topdown")]
    pub view: String,
}

fn load_config(path: Option<&Path>) -> Result<MissionConfig> {
    match path {
        Some(p) => MissionConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(MissionConfig::default()),
    }
}

fn load_policy(path: Option<&Path>) -> Result<DecisionTreePolicy> {
    match path {
        Some(p) => DecisionTreePolicy::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(DecisionTreePolicy::reference()),
    }
}

fn load_mock(path: &Path) -> Result<MockLlm> {
    Ok(MockLlm::new(MockScript::load(path)?))
}

/// `<seconds> <text>` per line; blank lines and `#` comments are skipped.
pub fn parse_commands(text: &str) -> Result<Vec<(f64, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (t, said) = line
            .split_once(char::is_whitespace)
            .with_context(|| format!("line {}: expected `<seconds> <text>`", n + 1))?;
        let t: f64 = t.parse().with_context(|| format!("line {}: bad time `{t}`", n + 1))?;
        out.push((t, said.trim().to_string()));
    }
    Ok(out)
}

pub async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(a) => serve(a).await,
        Command::Episode(a) => episode(a),
        Command::Aae(a) => aae(a).await,
        Command::Agent(a) => agent(a).await,
        Command::Export(a) => export(a),
        Command::Render(a) => render(a),
    }
}

async fn serve(a: ServeArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?.with_seed(a.seed);
    if !(a.speed > 0.0) {
        bail!("--speed must be positive");
    }
    let ai = match (&a.context_file, &a.policy) {
        (Some(path), _) => AiDescription::Text(load_context_doc(path)?),
        (None, Some(path)) => AiDescription::DecisionTree(load_policy(Some(path))?),
        (None, None) => AiDescription::Connected,
    };
    let options = ServerOptions {
        speed: a.speed,
        broadcast_every: a.broadcast_every,
        ai,
        ui_dir: a.ui_dir,
        ..ServerOptions::new(config, a.missions)
    };
    let listener = server::bind(&format!("{}:{}", a.host, a.port)).await?;
    let handle = server::spawn(options, listener).await?;
    tracing::info!("game server on ws://{}/play", handle.addr);
    let record = handle.finished().await?;
    println!(
        "mission {}: {:?}, completion {:.2}, {} events -> {}",
        record.id,
        record.outcome.status,
        record.outcome.final_completion,
        record.events,
        record.dir.display()
    );
    Ok(())
}

fn episode(a: EpisodeArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let policy;
    let (choice, profile_kind) = match a.ai {
        AiArg::Dt => {
            policy = load_policy(a.policy.as_deref())?;
            (AiChoice::DecisionTree(policy.clone()), AiArg::Dt)
        }
        AiArg::Cmd => {
            policy = DecisionTreePolicy::reference();
            let context = match &a.agent_context {
                Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => String::new(),
            };
            let commands = match &a.commands {
                Some(p) => parse_commands(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
                None => Vec::new(),
            };
            (AiChoice::Command { context, commands }, AiArg::Cmd)
        }
        AiArg::None => {
            policy = DecisionTreePolicy::reference();
            (AiChoice::None, AiArg::None)
        }
    };
    let result = run_episode(config, choice, a.seed)?;
    let profile = match profile_kind {
        AiArg::Dt => AiProfile::DecisionTree(&policy),
        AiArg::Cmd => AiProfile::Command,
        AiArg::None => AiProfile::Idle,
    };
    let context = MissionContextDoc::generate(&result.timeline, profile);
    let dir = MissionDir::new(&a.missions, &result.timeline.header.mission_id);
    dir.write(&result, &context)?;
    let o = result.outcome;
    println!(
        "mission {}: {:?} at {:.2} s, completion {:.2}, {} events -> {}",
        result.timeline.header.mission_id,
        o.status,
        o.ended_at.unwrap_or(f64::NAN),
        o.final_completion,
        result.timeline.events.len(),
        dir.root.display()
    );
    Ok(())
}

async fn aae(a: AaeArgs) -> Result<()> {
    let llm: Arc<dyn LanguageModel> = match &a.mock_llm {
        Some(path) => Arc::new(load_mock(path)?),
        None => match RemoteLlm::from_env() {
            Ok(llm) => Arc::new(llm),
            Err(e) => {
                tracing::warn!("{e}; queries will fail with llm-unavailable");
                Arc::new(Unreachable)
            }
        },
    };
    let sessions = match &a.persist_dir {
        Some(dir) => SessionStore::persistent(dir)?,
        None => SessionStore::in_memory(),
    };
    let mut service = AaeService::new(MissionStore::new(&a.missions), sessions, llm);
    service.budget_tokens = a.budget_tokens;
    let addr = format!("{}:{}", a.host, a.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("could not bind {addr}"))?;
    tracing::info!("after-action service on http://{addr}");
    axum::serve(listener, aae_http::router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn drive<A: RemoteAgent>(
    server: &str,
    agent: &mut A,
    llm: Option<Arc<dyn LanguageModel>>,
) -> Result<RunSummary> {
    let conn = Connection::connect(server)
        .await
        .with_context(|| format!("connecting to {server}"))?;
    let summary = run_agent(conn, agent, llm).await?;
    println!(
        "{}: mission {:?}, completion {:.2}, {} updates, {} actions",
        agent.id(),
        summary.outcome.status,
        summary.outcome.final_completion,
        summary.updates,
        summary.actions_sent
    );
    Ok(summary)
}

async fn agent(cmd: AgentCommand) -> Result<()> {
    match cmd {
        AgentCommand::Dt(a) => {
            let mut agent = DtAgent::new(AgentId::new(a.name)?, load_policy(a.policy.as_deref())?);
            drive(&a.connect.server, &mut agent, None).await?;
        }
        AgentCommand::Human(a) => {
            let mut agent = ScriptedHuman::new(AgentId::new(a.name)?, a.seed);
            drive(&a.connect.server, &mut agent, None).await?;
        }
        AgentCommand::Cmd(a) => {
            let context = load_context_file(&a.context)?;
            let llm: Option<Arc<dyn LanguageModel>> = match (&a.mock_llm, a.llm) {
                (Some(path), _) => Some(Arc::new(load_mock(path)?)),
                (None, true) => Some(Arc::new(RemoteLlm::from_env()?)),
                (None, false) => None,
            };
            let mut agent = CommandAgent::new(AgentId::new(a.name)?, context).deferred();
            let result = drive(&a.connect.server, &mut agent, llm).await;
            if let Some(path) = &a.conversation_out {
                agent
                    .conversation_mut()
                    .save(path, chrono::Utc::now().to_rfc3339())
                    .with_context(|| format!("saving {}", path.display()))?;
            }
            result?;
        }
    }
    Ok(())
}

fn read_timeline(a: &ExportArgs) -> Result<MissionTimeline> {
    let path = match (&a.mission, &a.timeline) {
        (Some(dir), _) => dir.join("timeline.json"),
        (None, Some(file)) => file.clone(),
        (None, None) => bail!("one of --mission or --timeline is required"),
    };
    MissionTimeline::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn export(a: ExportArgs) -> Result<()> {
    let timeline = read_timeline(&a)?;
    let bytes = if a.bare_array {
        timeline.to_bare_json()
    } else {
        timeline.to_json()
    };
    std::fs::write(&a.out, bytes).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} events -> {}", timeline.events.len(), a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    if !(a.every > 0.0) {
        bail!("--every must be positive");
    }
    let timeline = MissionTimeline::load(&a.mission.join("timeline.json"))
        .with_context(|| format!("loading {}", a.mission.display()))?;
    let view: Viewpoint = a.view.parse()?;
    let frames = a.mission.join("frames");
    std::fs::create_dir_all(&frames)?;
    let mut replay = Replayer::new(&timeline)?;
    let end = replay.end_time();
    let mut n = 0u64;
    loop {
        let t = n as f64 * a.every;
        if t > end {
            break;
        }
        let png = render_png(&replay.seek(t)?, &view)?;
        let ms = (t * 1000.0).round() as u64;
        std::fs::write(frames.join(format!("{view}-{ms:08}.png")), png)?;
        n += 1;
    }
    println!("{n} frames -> {}", frames.display());
    Ok(())
}
