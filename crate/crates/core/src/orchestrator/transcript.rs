use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::BackendKind;
use crate::planlang::ExecStatus;
use crate::planner::CallSource;
use crate::sim::Target;
use crate::world::FrameTag;

use super::{Mode, Verdict};

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Prompt {
        #[serde(rename = "loop")]
        loop_index: usize,
        role: String,
        digest: String,
        text: String,
    },
    Completion {
        #[serde(rename = "loop")]
        loop_index: usize,
        role: String,
        digest: String,
        response: String,
        latency_secs: f64,
        source: CallSource,
    },
    /// The plan for a loop, or the reason none was produced.
    Code {
        #[serde(rename = "loop")]
        loop_index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        digest: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Primitive {
        #[serde(rename = "loop")]
        loop_index: usize,
        index: usize,
        obj: String,
        target: Target,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<String>,
        world_digest: u64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        injected: bool,
    },
    Observation {
        #[serde(rename = "loop")]
        loop_index: usize,
        frame: FrameTag,
        world_digest: u64,
        summary: Vec<String>,
        /// Execution status, on the frame taken after a program ran.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exec: Option<ExecStatus>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exec_detail: Option<String>,
    },
    Feedback {
        #[serde(rename = "loop")]
        loop_index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        success: Option<bool>,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Verdict {
        task: String,
        seed: u64,
        mode: Mode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fault_at: Option<usize>,
        backend: BackendKind,
        verdict: Verdict,
        loops_used: usize,
        final_digest: u64,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Prompt { .. } => "prompt",
            Event::Completion { .. } => "completion",
            Event::Code { .. } => "code",
            Event::Primitive { .. } => "primitive",
            Event::Observation { .. } => "observation",
            Event::Feedback { .. } => "feedback",
            Event::Verdict { .. } => "verdict",
        }
    }

    pub fn loop_index(&self) -> Option<usize> {
        match self {
            Event::Prompt { loop_index, .. }
            | Event::Completion { loop_index, .. }
            | Event::Code { loop_index, .. }
            | Event::Primitive { loop_index, .. }
            | Event::Observation { loop_index, .. }
            | Event::Feedback { loop_index, .. } => Some(*loop_index),
            Event::Verdict { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub events: Vec<Event>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
}

impl EpisodeTranscript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line)
                .map_err(|err| TranscriptError::Malformed { line: i + 1, message: err.to_string() })?;
            events.push(e);
        }
        Ok(EpisodeTranscript { events })
    }

    pub fn verdict(&self) -> Option<&Event> {
        self.events.iter().rev().find(|e| matches!(e, Event::Verdict { .. }))
    }

    /// Checks loop structure: within each loop one plan (`code`) event, then
    /// the loop's primitives, then one report (`feedback`) event in closed
    /// loop mode; a single trailing verdict.
    pub fn check_structure(&self) -> Result<(), TranscriptError> {
        let err = |line: usize, message: String| TranscriptError::Structure { line, message };
        let n = self.events.len();
        let Some(Event::Verdict { mode, loops_used, verdict, .. }) = self.events.last() else {
            return Err(err(n, "transcript does not end with a verdict".into()));
        };
        #[derive(PartialEq, Clone, Copy)]
        enum Phase {
            Start,
            Planned,
            Reported,
        }
        let mut current: Option<usize> = None;
        let mut phase = Phase::Start;
        let mut loops_seen = 0;
        for (i, e) in self.events[..n - 1].iter().enumerate() {
            let line = i + 1;
            let Some(l) = e.loop_index() else {
                return Err(err(line, "verdict before the end of the transcript".into()));
            };
            if current != Some(l) {
                if let Some(c) = current {
                    if l != c + 1 {
                        return Err(err(line, format!("loop {l} follows loop {c}")));
                    }
                    if phase == Phase::Start {
                        return Err(err(line, format!("loop {c} has no plan event")));
                    }
                    if *mode == Mode::ClosedLoop && phase != Phase::Reported {
                        return Err(err(line, format!("loop {c} has no report event")));
                    }
                } else if l != 0 {
                    return Err(err(line, format!("first loop is {l}")));
                }
                current = Some(l);
                phase = Phase::Start;
                loops_seen += 1;
            }
            match e {
                Event::Code { .. } => {
                    if phase != Phase::Start {
                        return Err(err(line, format!("second plan event in loop {l}")));
                    }
                    phase = Phase::Planned;
                }
                Event::Feedback { .. } => {
                    if *mode == Mode::OpenLoop {
                        return Err(err(line, "report event in an open-loop episode".into()));
                    }
                    if phase != Phase::Planned {
                        return Err(err(line, format!("report event in loop {l} without a preceding plan or after another report")));
                    }
                    phase = Phase::Reported;
                }
                Event::Primitive { .. } if phase != Phase::Planned => {
                    return Err(err(line, format!("primitive outside the plan-to-report span of loop {l}")));
                }
                _ => {}
            }
        }
        if let Some(c) = current {
            if phase == Phase::Start {
                return Err(err(n, format!("loop {c} has no plan event")));
            }
            if *mode == Mode::ClosedLoop && phase != Phase::Reported && *verdict != Verdict::InfrastructureFailure {
                return Err(err(n, format!("loop {c} has no report event")));
            }
        }
        if loops_seen != *loops_used {
            return Err(err(n, format!("verdict claims {loops_used} loops, transcript has {loops_seen}")));
        }
        Ok(())
    }
}
