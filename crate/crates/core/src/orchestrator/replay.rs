use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::llm::{
    assemble_planner_prompt, builtin_library, Backend, BackendError, BackendKind, CallKey, CompletionRecord, PromptBundle,
};
use crate::planlang::{execute, parse_program, sha256_hex, Budget};
use crate::planner::Planner;
use crate::reporter::{mock_report, parse_feedback, render_feedback, FeedbackReport};
use crate::skills::ApiEnv;
use crate::tasks::{evaluate, instantiate, lookup};
use crate::world::FrameTag;

use super::transcript::{EpisodeTranscript, Event};
use super::{env_seed, retry_notice, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub lines: usize,
    pub checked: usize,
    /// First line (1-based) whose recorded content the replay does not reproduce.
    pub divergence: Option<(usize, String)>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Serves recorded co-planner completions in order, checking prompt digests.
struct ReplayBackend {
    queue: VecDeque<(usize, String, String, String)>,
    mismatch: Arc<Mutex<Option<(usize, String)>>>,
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&mut self, key: &CallKey, prompt: &PromptBundle) -> Result<CompletionRecord, BackendError> {
        let digest = prompt.digest();
        let fail = |line: usize, m: String| {
            let mut slot = self.mismatch.lock().expect("replay lock");
            if slot.is_none() {
                *slot = Some((line, m.clone()));
            }
            Err(BackendError::Script(m))
        };
        match self.queue.pop_front() {
            None => fail(0, format!("replay issued an unrecorded {} call", key.role)),
            Some((line, role, d, _)) if role != key.role || d != digest => {
                fail(line, format!("replayed {} call (prompt {}) does not match recorded {role} call (prompt {})", key.role, &digest[..12], &d[..d.len().min(12)]))
            }
            Some((_, _, d, response)) => {
                Ok(CompletionRecord { prompt_digest: d, response_text: response, latency_secs: 0.0, backend: BackendKind::Scripted })
            }
        }
    }
}

#[derive(Default)]
struct LoopLines<'a> {
    before: Option<(usize, &'a Event)>,
    planner: Option<(usize, &'a Event)>,
    code: Option<(usize, &'a Event)>,
    lmp: Vec<(usize, &'a Event)>,
    primitives: Vec<(usize, &'a Event)>,
    after: Option<(usize, &'a Event)>,
    reporter: Option<(usize, &'a Event)>,
    feedback: Option<(usize, &'a Event)>,
}

/// Re-executes the recorded plans from the recorded seed and checks every
/// digest, primitive and verdict line against the transcript.
pub fn replay_transcript(t: &EpisodeTranscript, budget: &Budget) -> ReplayReport {
    let lines = t.events.len();
    let mut report = ReplayReport { lines, checked: 0, divergence: None };
    let diverge = |line: usize, msg: String, r: &mut ReplayReport| {
        if r.divergence.is_none() {
            r.divergence = Some((line, msg));
        }
    };
    if let Err(e) = t.check_structure() {
        let line = match &e {
            super::TranscriptError::Malformed { line, .. } | super::TranscriptError::Structure { line, .. } => *line,
        };
        diverge(line, e.to_string(), &mut report);
        return report;
    }
    let Some(Event::Verdict { task, seed, fault_at, verdict, final_digest, .. }) = t.verdict() else {
        unreachable!("structure check guarantees a verdict");
    };
    let (inst, mut world) = match lookup(task).and_then(|s| instantiate(s, *seed)) {
        Ok(x) => x,
        Err(e) => {
            diverge(lines, format!("cannot instantiate task {task} seed {seed}: {e}"), &mut report);
            return report;
        }
    };
    let mut loops: Vec<LoopLines> = Vec::new();
    for (i, e) in t.events.iter().enumerate() {
        let Some(l) = e.loop_index() else { continue };
        if loops.len() <= l {
            loops.resize_with(l + 1, LoopLines::default);
        }
        let slot = &mut loops[l];
        let at = (i + 1, e);
        match e {
            Event::Observation { frame: FrameTag::Before, .. } => slot.before = Some(at),
            Event::Observation { frame: FrameTag::After, .. } => slot.after = Some(at),
            Event::Completion { role, .. } if role == "planner" => slot.planner = Some(at),
            Event::Completion { role, .. } if role == "reporter" => slot.reporter = Some(at),
            Event::Completion { .. } => slot.lmp.push(at),
            Event::Code { .. } => slot.code = Some(at),
            Event::Primitive { .. } => slot.primitives.push(at),
            Event::Feedback { .. } => slot.feedback = Some(at),
            Event::Prompt { .. } | Event::Verdict { .. } => {}
        }
    }
    let library = builtin_library();
    let mut feedback: Option<FeedbackReport> = None;
    for (l, lp) in loops.iter().enumerate() {
        if let Some((line, Event::Observation { world_digest, .. })) = lp.before {
            report.checked += 1;
            if *world_digest != world.digest() {
                diverge(line, format!("loop {l}: scene digest {} differs from replayed {}", world_digest, world.digest()), &mut report);
                return report;
            }
        }
        if let Some((line, Event::Completion { digest, .. })) = lp.planner {
            report.checked += 1;
            let prompt = assemble_planner_prompt(&inst, &world.observe(FrameTag::Before), feedback.as_ref(), &library, &world.bounds);
            if *digest != prompt.digest() {
                diverge(line, format!("loop {l}: planner prompt digest differs from the replayed prompt"), &mut report);
                return report;
            }
        }
        let Some((code_line, Event::Code { digest, source, .. })) = lp.code else { continue };
        if let (Some(d), Some(src)) = (digest, source) {
            report.checked += 1;
            if sha256_hex(src) != *d {
                diverge(code_line, format!("loop {l}: code does not match its digest"), &mut report);
                return report;
            }
            let prog = match parse_program(src) {
                Ok(p) => p,
                Err(e) => {
                    diverge(code_line, format!("loop {l}: recorded code does not parse: {e}"), &mut report);
                    return report;
                }
            };
            let mismatch = Arc::new(Mutex::new(None));
            let queue = lp
                .lmp
                .iter()
                .filter_map(|(line, e)| match e {
                    Event::Completion { role, digest, response, .. } => Some((*line, role.clone(), digest.clone(), response.clone())),
                    _ => None,
                })
                .collect();
            let backend = ReplayBackend { queue, mismatch: mismatch.clone() };
            let mut planner = Planner::new(Box::new(backend), library.clone());
            planner.set_context(&inst, l);
            let mut env = ApiEnv::new(world.clone(), env_seed(*seed, l)).with_fault(if l == 0 { *fault_at } else { None });
            env.set_lmp(Some(&mut planner));
            let out = execute(&prog, &mut env, budget);
            let ApiEnv { world: after, log, .. } = env;
            if let Some((line, m)) = mismatch.lock().expect("replay lock").take() {
                diverge(if line == 0 { code_line } else { line }, format!("loop {l}: {m}"), &mut report);
                return report;
            }
            for (k, (line, e)) in lp.primitives.iter().enumerate() {
                report.checked += 1;
                let Event::Primitive { obj, target, ok, world_digest, .. } = e else { continue };
                match log.get(k) {
                    Some(p) if p.primitive.obj == *obj && p.primitive.target == *target && p.result.ok == *ok && p.world_digest == *world_digest => {}
                    Some(p) => {
                        diverge(*line, format!("loop {l}: primitive {k} replays as {} -> {:?} (ok={}, digest {})", p.primitive.obj, p.primitive.target, p.result.ok, p.world_digest), &mut report);
                        return report;
                    }
                    None => {
                        diverge(*line, format!("loop {l}: primitive {k} is not issued on replay"), &mut report);
                        return report;
                    }
                }
            }
            if log.len() > lp.primitives.len() {
                let line = lp.after.map(|a| a.0).unwrap_or(code_line);
                diverge(line, format!("loop {l}: replay issued {} primitives, transcript records {}", log.len(), lp.primitives.len()), &mut report);
                return report;
            }
            world = after;
            if let Some((line, Event::Observation { exec, .. })) = lp.after {
                if *exec != Some(out.status) {
                    diverge(line, format!("loop {l}: execution status {} on replay, recorded {:?}", out.status.name(), exec), &mut report);
                    return report;
                }
            }
        }
        if let Some((line, Event::Observation { world_digest, .. })) = lp.after {
            report.checked += 1;
            if *world_digest != world.digest() {
                diverge(line, format!("loop {l}: scene digest {} differs from replayed {}", world_digest, world.digest()), &mut report);
                return report;
            }
        }
        if let Some((line, Event::Feedback { success, text, .. })) = lp.feedback {
            report.checked += 1;
            let expected = match lp.reporter {
                Some((_, Event::Completion { response, .. })) => parse_feedback(response).ok(),
                _ => mock_report(&inst, &world).ok(),
            };
            match (success, expected) {
                (Some(_), Some(r)) => {
                    if render_feedback(&r) != *text {
                        diverge(line, format!("loop {l}: feedback differs from the replayed report"), &mut report);
                        return report;
                    }
                    feedback = Some(r);
                }
                (None, _) => feedback = Some(retry_notice()),
                (Some(_), None) => {
                    diverge(line, format!("loop {l}: recorded feedback cannot be reproduced"), &mut report);
                    return report;
                }
            }
        }
    }
    report.checked += 1;
    if world.digest() != *final_digest {
        diverge(lines, format!("final scene digest {} differs from replayed {}", final_digest, world.digest()), &mut report);
        return report;
    }
    if *verdict != Verdict::InfrastructureFailure {
        let success = evaluate(&inst, &world).map(|e| e.success).unwrap_or(false);
        let expect = if success { Verdict::Success } else { Verdict::Failure };
        if expect != *verdict {
            diverge(lines, format!("verdict {} but replay evaluates to {}", verdict.name(), expect.name()), &mut report);
        }
    }
    report
}
