//! The plan, execute, observe, report loop and the suite runner.

mod replay;
mod suite;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{builtin_library, Backend, BackendConfig, BackendError, BackendKind, ExampleLibrary, LiveBackend, ScriptRecord, ScriptedBackend};
use crate::planlang::{execute, Budget, ExecStatus};
use crate::planner::{CallTrace, Planner, ReporterMode};
use crate::reporter::{render_feedback, FeedbackReport};
use crate::sim::PrimitiveLogEntry;
use crate::skills::ApiEnv;
use crate::tasks::{evaluate, fault_index, instantiate, EvalResult, TaskError, TaskSpec};
use crate::world::{FrameTag, WorldState};

pub use replay::{replay_transcript, ReplayReport};
pub use suite::{run_suite, MetricsRow, MetricsTable, SuiteResult, METRICS_HEADER};
pub use transcript::{EpisodeTranscript, Event, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedLoop,
    OpenLoop,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::ClosedLoop => "closed_loop",
            Mode::OpenLoop => "open_loop",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "closed_loop" | "closed" => Some(Mode::ClosedLoop),
            "open_loop" | "open" => Some(Mode::OpenLoop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Failure,
    InfrastructureFailure,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::Failure => "failure",
            Verdict::InfrastructureFailure => "infrastructure_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopLimits {
    pub max_loops: usize,
    pub max_backend_failures: usize,
    pub budget: Budget,
}

impl Default for LoopLimits {
    fn default() -> Self {
        LoopLimits { max_loops: 5, max_backend_failures: 3, budget: Budget::default() }
    }
}

impl LoopLimits {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let b = &self.budget;
        if self.max_loops == 0
            || self.max_backend_failures == 0
            || b.max_eval_steps == 0
            || b.max_call_depth == 0
            || b.max_primitives == 0
        {
            return Err(OrchestratorError::Config("loop limits and budgets must be positive".into()));
        }
        Ok(())
    }
}

/// Where completions come from. Scripts are loaded once and shared.
#[derive(Clone)]
pub enum BackendSource {
    /// Canned responses; misses on the main planner go to the task oracle.
    Scripted(Arc<Vec<ScriptRecord>>),
    Live(BackendConfig),
}

impl BackendSource {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        Ok(match cfg.kind {
            BackendKind::Scripted => {
                let records = match &cfg.script_path {
                    Some(p) => {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| BackendError::Script(format!("{}: {e}", p.display())))?;
                        let mut v = Vec::new();
                        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                            v.push(
                                serde_json::from_str(line)
                                    .map_err(|e| BackendError::Script(format!("line {}: {e}", i + 1)))?,
                            );
                        }
                        ScriptedBackend::from_records(Vec::clone(&v))?;
                        v
                    }
                    None => Vec::new(),
                };
                BackendSource::Scripted(Arc::new(records))
            }
            BackendKind::Live => BackendSource::Live(cfg.clone()),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSource::Scripted(_) => BackendKind::Scripted,
            BackendSource::Live(_) => BackendKind::Live,
        }
    }

    fn build(&self) -> Result<Box<dyn Backend + Send>, BackendError> {
        Ok(match self {
            BackendSource::Scripted(r) => Box::new(ScriptedBackend::from_records(Vec::clone(r))?),
            BackendSource::Live(cfg) => Box::new(LiveBackend::from_config(cfg)?),
        })
    }
}

/// Everything an episode needs besides the task and seed.
#[derive(Clone)]
pub struct EpisodeConfig {
    pub backend: BackendSource,
    pub reporter: ReporterMode,
    pub library: ExampleLibrary,
    /// Force one primitive of the first loop to no-op on tasks that define a fault point.
    pub inject_fault: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            backend: BackendSource::Scripted(Arc::new(Vec::new())),
            reporter: ReporterMode::Mock,
            library: builtin_library(),
            inject_fault: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub task: String,
    pub seed: u64,
    pub mode: Mode,
    pub verdict: Verdict,
    pub loops_used: usize,
    pub transcript: EpisodeTranscript,
    pub final_eval: EvalResult,
    pub final_world: WorldState,
    /// The last reporter verdict, kept for agreement analysis.
    pub reported_success: Option<bool>,
}

fn call_events(trace: &[CallTrace], loop_index: usize, out: &mut Vec<Event>) {
    for t in trace {
        out.push(Event::Prompt {
            loop_index,
            role: t.key.role.clone(),
            digest: t.prompt_digest.clone(),
            text: t.user_text.clone(),
        });
        out.push(Event::Completion {
            loop_index,
            role: t.key.role.clone(),
            digest: t.prompt_digest.clone(),
            response: t.response_text.clone(),
            latency_secs: t.latency_secs,
            source: t.source,
        });
    }
}

fn primitive_event(loop_index: usize, p: &PrimitiveLogEntry) -> Event {
    Event::Primitive {
        loop_index,
        index: p.index,
        obj: p.primitive.obj.clone(),
        target: p.primitive.target.clone(),
        ok: p.result.ok,
        failure: p.result.failure_reason.map(|r| r.name().to_string()),
        world_digest: p.world_digest,
        injected: p.injected_fault,
    }
}

fn observation_event(loop_index: usize, world: &WorldState, tag: FrameTag) -> Event {
    let obs = world.observe(tag);
    Event::Observation { loop_index, frame: tag, world_digest: world.digest(), summary: obs.text_summary, exec: None, exec_detail: None }
}

/// Feedback given to the planner after a loop whose report is unusable.
pub fn retry_notice() -> FeedbackReport {
    FeedbackReport { success: false, items: Vec::new() }
}

/// Seed of the API environment for one loop.
fn env_seed(seed: u64, loop_index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ loop_index as u64
}

/// Runs one episode and returns its verdict from the ground-truth evaluator.
pub fn run_episode(
    task: &TaskSpec,
    seed: u64,
    mode: Mode,
    cfg: &EpisodeConfig,
    limits: &LoopLimits,
) -> Result<EpisodeResult, OrchestratorError> {
    limits.validate()?;
    let (inst, mut world) = instantiate(task, seed)?;
    let fault_at = if cfg.inject_fault { fault_index(task.id, seed) } else { None };
    let oracle = matches!(cfg.backend, BackendSource::Scripted(_));
    let mut planner = Planner::new(cfg.backend.build()?, cfg.library.clone()).with_oracle(oracle).with_reporter(cfg.reporter);
    let mut events = Vec::new();
    let mut feedback: Option<FeedbackReport> = None;
    let mut reported_success = None;
    let mut loops_used = 0;
    let mut infrastructure = false;
    let max_loops = if mode == Mode::OpenLoop { 1 } else { limits.max_loops };

    for l in 0..max_loops {
        loops_used = l + 1;
        events.push(observation_event(l, &world, FrameTag::Before));
        let before = world.observe(FrameTag::Before);
        let planned = planner.plan(&inst, &world, feedback.as_ref(), l);
        call_events(&planner.take_trace(), l, &mut events);
        let prog = match planned {
            Ok(p) => {
                events.push(Event::Code {
                    loop_index: l,
                    digest: Some(p.source_digest.clone()),
                    source: Some(p.source.clone()),
                    error: None,
                });
                Some(p)
            }
            Err(f) => {
                events.push(Event::Code { loop_index: l, digest: None, source: None, error: Some(format!("{}: {f}", f.tag())) });
                None
            }
        };
        if planner.transport_failures() >= limits.max_backend_failures {
            infrastructure = true;
            break;
        }
        if let Some(prog) = prog {
            let mut env = ApiEnv::new(world.clone(), env_seed(seed, l)).with_fault(if l == 0 { fault_at } else { None });
            env.set_lmp(Some(&mut planner));
            let out = execute(&prog, &mut env, &limits.budget);
            let ApiEnv { world: after, log, .. } = env;
            world = after;
            let mut calls = planner.take_trace().into_iter().peekable();
            for p in &log {
                while let Some(c) = calls.next_if(|c| c.at_primitive <= p.index) {
                    call_events(&[c], l, &mut events);
                }
                events.push(primitive_event(l, p));
            }
            call_events(&calls.collect::<Vec<_>>(), l, &mut events);
            let mut obs = observation_event(l, &world, FrameTag::After);
            if let Event::Observation { exec, exec_detail, .. } = &mut obs {
                *exec = Some(out.status);
                *exec_detail = out.detail.as_ref().map(|d| format!("line {}: {}", d.line, d.message));
            }
            events.push(obs);
            if out.infrastructure && planner.transport_failures() >= limits.max_backend_failures {
                infrastructure = true;
                break;
            }
            debug_assert!(out.status != ExecStatus::Completed || out.detail.is_none());
        } else {
            events.push(observation_event(l, &world, FrameTag::After));
        }
        if mode == Mode::OpenLoop {
            break;
        }
        let report = planner.report(&inst, &before, &world);
        call_events(&planner.take_trace(), l, &mut events);
        match report {
            Ok(r) => {
                events.push(Event::Feedback { loop_index: l, success: Some(r.success), text: render_feedback(&r), error: None });
                reported_success = Some(r.success);
                let done = r.success;
                feedback = Some(r);
                if done {
                    break;
                }
            }
            Err(e) => {
                events.push(Event::Feedback { loop_index: l, success: None, text: render_feedback(&retry_notice()), error: Some(e.to_string()) });
                reported_success = None;
                feedback = Some(retry_notice());
            }
        }
        if planner.transport_failures() >= limits.max_backend_failures {
            infrastructure = true;
            break;
        }
    }

    let final_eval = evaluate(&inst, &world)?;
    let verdict = if infrastructure {
        Verdict::InfrastructureFailure
    } else if final_eval.success {
        Verdict::Success
    } else {
        Verdict::Failure
    };
    events.push(Event::Verdict {
        task: task.id.to_string(),
        seed,
        mode,
        fault_at,
        backend: cfg.backend.kind(),
        verdict,
        loops_used,
        final_digest: world.digest(),
    });
    Ok(EpisodeResult {
        task: task.id.to_string(),
        seed,
        mode,
        verdict,
        loops_used,
        transcript: EpisodeTranscript { events },
        final_eval,
        final_world: world,
        reported_success,
    })
}

#[cfg(test)]
mod tests;
