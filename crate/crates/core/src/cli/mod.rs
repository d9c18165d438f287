//! Command-line surface: run suites, render snapshots, validate transcripts.

pub mod snapshot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::llm::{BackendConfig, BackendKind};
use crate::orchestrator::{
    replay_transcript, run_suite, BackendSource, EpisodeConfig, EpisodeTranscript, LoopLimits, Mode, ReplayReport,
    SuiteResult,
};
use crate::planner::ReporterMode;
use crate::tasks::{catalog, instantiate, lookup, task_registry, TaskSpec};
use crate::world::WorldState;

pub const ENV_BACKEND: &str = "TABLETOP_BACKEND";
pub const ENV_ENDPOINT: &str = "TABLETOP_ENDPOINT";
pub const ENV_MODEL: &str = "TABLETOP_MODEL";
pub const ENV_SCRIPT: &str = "TABLETOP_SCRIPT";
pub const ENV_OUT: &str = "TABLETOP_OUT";
pub const ENV_JOBS: &str = "TABLETOP_JOBS";

#[derive(Debug, Parser)]
#[command(name = "tabletop", version, about = "Closed-loop plan execution on a simulated tabletop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes for a set of tasks and seeds and write metrics and transcripts.
    Run(RunArgs),
    /// Render a scene top-down to a PPM image.
    Snapshot(SnapshotArgs),
    /// Replay a transcript and check it line by line.
    Validate(ValidateArgs),
    /// List the registered tasks.
    Catalog,
}

#[derive(Debug, Args, Default, Clone)]
pub struct RunArgs {
    /// Comma-separated task ids, or "all".
    #[arg(long)]
    pub tasks: Option<String>,
    /// A count N (seeds 0..N), a list "3,5,8" or a range "10..20".
    #[arg(long)]
    pub seeds: Option<String>,
    /// closed_loop or open_loop.
    #[arg(long)]
    pub mode: Option<String>,
    /// scripted or live.
    #[arg(long)]
    pub backend: Option<String>,
    /// JSONL script for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// mock (ground-truth diff) or backend.
    #[arg(long)]
    pub reporter: Option<String>,
    #[arg(long)]
    pub max_loops: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write final scenes as JSON and PPM.
    #[arg(long)]
    pub snapshot: bool,
    /// Force one primitive of the first loop to no-op on tasks with a fault point.
    #[arg(long)]
    pub inject_fault: bool,
    /// TOML file with defaults for any of the above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SnapshotArgs {
    /// World JSON file. Omit to render the initial scene of --task/--seed.
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ValidateArgs {
    pub transcript: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Settings from a `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tasks: Option<TaskSel>,
    pub seeds: Option<SeedSel>,
    pub mode: Option<Mode>,
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub reporter: Option<ReporterMode>,
    pub max_loops: Option<usize>,
    pub max_backend_failures: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub snapshot: Option<bool>,
    pub inject_fault: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TaskSel {
    Text(String),
    List(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SeedSel {
    Count(u64),
    Text(String),
    List(Vec<u64>),
}

/// Fully resolved settings for `run`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tasks: Vec<&'static TaskSpec>,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub backend: BackendConfig,
    pub reporter: ReporterMode,
    pub limits: LoopLimits,
    pub out_dir: PathBuf,
    pub snapshot: bool,
    pub inject_fault: bool,
    pub jobs: usize,
}

pub fn parse_tasks(text: &str) -> Result<Vec<&'static TaskSpec>, CliError> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(task_registry().iter().collect());
    }
    let ids: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(CliError::Usage("no tasks given".into()));
    }
    ids.into_iter().map(|id| lookup(id).map_err(|e| CliError::Usage(e.to_string()))).collect()
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("cannot read seeds `{text}`; use a count, a list a,b,c or a range a..b"));
    let t = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = t.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else if t.contains(',') {
        t.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    } else {
        let n: u64 = t.parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    Ok(seeds)
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    Mode::parse(s).ok_or_else(|| CliError::Usage(format!("unknown mode `{s}` (closed_loop or open_loop)")))
}

fn parse_backend(s: &str) -> Result<BackendKind, CliError> {
    match s {
        "scripted" => Ok(BackendKind::Scripted),
        "live" => Ok(BackendKind::Live),
        _ => Err(CliError::Usage(format!("unknown backend `{s}` (scripted or live)"))),
    }
}

fn parse_reporter(s: &str) -> Result<ReporterMode, CliError> {
    match s {
        "mock" => Ok(ReporterMode::Mock),
        "backend" => Ok(ReporterMode::Backend),
        _ => Err(CliError::Usage(format!("unknown reporter `{s}` (mock or backend)"))),
    }
}

pub fn load_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Merges flags, the config file and environment variables, in that order of
/// precedence.
pub fn resolve_run(args: &RunArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => load_file_config(p)?,
        None => FileConfig::default(),
    };
    let tasks = match (&args.tasks, &file.tasks) {
        (Some(t), _) => parse_tasks(t)?,
        (None, Some(TaskSel::Text(t))) => parse_tasks(t)?,
        (None, Some(TaskSel::List(v))) => parse_tasks(&v.join(","))?,
        (None, None) => parse_tasks("all")?,
    };
    let seeds = match (&args.seeds, &file.seeds) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(SeedSel::Count(n))) => parse_seeds(&n.to_string())?,
        (None, Some(SeedSel::Text(s))) => parse_seeds(s)?,
        (None, Some(SeedSel::List(v))) if !v.is_empty() => v.clone(),
        (None, Some(SeedSel::List(_))) => return Err(CliError::Usage("at least one seed is required".into())),
        (None, None) => vec![0],
    };
    let mode = match &args.mode {
        Some(m) => parse_mode(m)?,
        None => file.mode.unwrap_or(Mode::ClosedLoop),
    };
    let kind = match (&args.backend, file.backend, env(ENV_BACKEND)) {
        (Some(b), _, _) => parse_backend(b)?,
        (None, Some(b), _) => b,
        (None, None, Some(b)) => parse_backend(&b)?,
        (None, None, None) => BackendKind::Scripted,
    };
    let defaults = BackendConfig::default();
    let backend = BackendConfig {
        kind,
        endpoint: args.endpoint.clone().or(file.endpoint.clone()).or_else(|| env(ENV_ENDPOINT)),
        model_name: args.model.clone().or(file.model.clone()).or_else(|| env(ENV_MODEL)),
        temperature: file.temperature.unwrap_or(defaults.temperature),
        timeout_secs: file.timeout_secs.unwrap_or(defaults.timeout_secs),
        max_retries: file.max_retries.unwrap_or(defaults.max_retries),
        script_path: args.script.clone().or(file.script.clone()).or_else(|| env(ENV_SCRIPT).map(PathBuf::from)),
    };
    backend.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let reporter = match &args.reporter {
        Some(r) => parse_reporter(r)?,
        None => file.reporter.unwrap_or_default(),
    };
    let mut limits = LoopLimits::default();
    if let Some(n) = args.max_loops.or(file.max_loops) {
        limits.max_loops = n;
    }
    if let Some(n) = file.max_backend_failures {
        limits.max_backend_failures = n;
    }
    limits.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let env_jobs = match env(ENV_JOBS) {
        Some(j) => Some(j.parse::<usize>().map_err(|_| CliError::Usage(format!("{ENV_JOBS} must be a count")))?),
        None => None,
    };
    let jobs = args
        .jobs
        .or(file.jobs)
        .or(env_jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out_dir = args.out.clone().or(file.out.clone()).or_else(|| env(ENV_OUT).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunConfig {
        tasks,
        seeds,
        mode,
        backend,
        reporter,
        limits,
        out_dir,
        snapshot: args.snapshot || file.snapshot.unwrap_or(false),
        inject_fault: args.inject_fault || file.inject_fault.unwrap_or(false),
        jobs,
    })
}

fn episode_stem(task: &str, seed: u64, mode: Mode) -> String {
    format!("{task}_s{seed}_{}", mode.name())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io(path, e))
}

/// Runs the suite and writes every artifact under `out_dir`.
pub fn cmd_run(cfg: &RunConfig) -> Result<SuiteResult, CliError> {
    let source = BackendSource::from_config(&cfg.backend).map_err(|e| CliError::Usage(e.to_string()))?;
    let ecfg = EpisodeConfig {
        backend: source,
        reporter: cfg.reporter,
        inject_fault: cfg.inject_fault,
        ..EpisodeConfig::default()
    };
    let suite = run_suite(&cfg.tasks, &cfg.seeds, cfg.mode, &ecfg, &cfg.limits, cfg.jobs)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let out = &cfg.out_dir;
    let tag = cfg.mode.name();
    write(&out.join(format!("metrics_{tag}.csv")), suite.metrics.to_csv().as_bytes())?;
    write(&out.join(format!("metrics_{tag}.txt")), suite.metrics.to_text().as_bytes())?;
    for e in &suite.episodes {
        let stem = episode_stem(&e.task, e.seed, e.mode);
        write(&out.join("transcripts").join(format!("{stem}.jsonl")), e.transcript.to_jsonl().as_bytes())?;
        if cfg.snapshot {
            write(&out.join("worlds").join(format!("{stem}.json")), e.final_world.to_json().as_bytes())?;
            write(&out.join("snapshots").join(format!("{stem}.ppm")), &snapshot::render(&e.final_world).to_ppm())?;
        }
    }
    Ok(suite)
}

pub fn cmd_snapshot(args: &SnapshotArgs) -> Result<(), CliError> {
    let world = match (&args.world, &args.task) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
            WorldState::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        (None, Some(t)) => {
            let spec = lookup(t).map_err(|e| CliError::Usage(e.to_string()))?;
            instantiate(spec, args.seed).map_err(|e| CliError::Run(e.to_string()))?.1
        }
        _ => return Err(CliError::Usage("give either a world file or --task".into())),
    };
    write(&args.out, &snapshot::render(&world).to_ppm())
}

pub fn cmd_validate(path: &Path, limits: &LoopLimits) -> Result<ReplayReport, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{}: no such transcript", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let t = match EpisodeTranscript::from_jsonl(&text) {
        Ok(t) => t,
        Err(e) => {
            let line = match &e {
                crate::orchestrator::TranscriptError::Malformed { line, .. }
                | crate::orchestrator::TranscriptError::Structure { line, .. } => *line,
            };
            return Ok(ReplayReport { lines: text.lines().count(), checked: 0, divergence: Some((line, e.to_string())) });
        }
    };
    Ok(replay_transcript(&t, &limits.budget))
}

/// Entry point shared by the binary and tests; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => resolve_run(&a, &|k| std::env::var(k).ok()).and_then(|cfg| {
            let suite = cmd_run(&cfg)?;
            print!("{}", suite.metrics.to_text());
            let infra = suite.metrics.infrastructure_failures();
            if infra > 0 {
                eprintln!("{infra} episode(s) ended in infrastructure failure");
                return Ok(3);
            }
            Ok(0)
        }),
        Command::Snapshot(a) => cmd_snapshot(&a).map(|_| 0),
        Command::Validate(a) => cmd_validate(&a.transcript, &LoopLimits::default()).map(|r| match &r.divergence {
            None => {
                println!("ok: {} lines, {} checks agree", r.lines, r.checked);
                0
            }
            Some((line, msg)) => {
                println!("diverges at line {line}: {msg}");
                1
            }
        }),
        Command::Catalog => {
            print!("{}", catalog());
            Ok(0)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
