//! Completion backends, prompt assembly and code extraction.

mod live;
mod prompt;
mod scripted;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planlang::ast::{ExprKind, Stmt, StmtKind};
use crate::planlang::parse_program;

pub use live::{LiveBackend, API_KEY_ENV};
pub use prompt::{
    assemble_planner_prompt, builtin_library, coordinate_frame_text, general_rules_text, Example, ExampleLibrary,
    PromptBundle, PromptSection, SectionKind,
};
pub use scripted::{Fallback, ScriptRecord, ScriptedBackend, DIGEST_PREFIX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Live,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Live => "live",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_name: None,
            temperature: 0.0,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            script_path: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if self.kind == BackendKind::Live {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Config("live backend needs an endpoint".into()));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Config("live backend needs a model name".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_digest: String,
    pub response_text: String,
    pub latency_secs: f64,
    pub backend: BackendKind,
}

/// Identifies one backend call within an episode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallKey {
    pub task: String,
    pub loop_index: usize,
    /// "planner", "reporter" or an LMP name.
    pub role: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no scripted response for {0}")]
    ScriptMissing(String),
    #[error("script error: {0}")]
    Script(String),
    #[error("backend unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
}

pub trait Backend {
    fn kind(&self) -> BackendKind;
    fn complete(&mut self, key: &CallKey, prompt: &PromptBundle) -> Result<CompletionRecord, BackendError>;
}

/// Builds the backend described by `cfg`. A scripted config without a script
/// file yields an empty script; callers install a fallback.
pub fn backend_from_config(cfg: &BackendConfig) -> Result<Box<dyn Backend + Send>, BackendError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Scripted => match &cfg.script_path {
            Some(p) => Box::new(ScriptedBackend::load(p)?),
            None => Box::new(ScriptedBackend::default()),
        },
        BackendKind::Live => Box::new(LiveBackend::from_config(cfg)?),
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no plan code found in the completion")]
pub struct ExtractError;

/// Wraps `code` in a plain fence.
pub fn fence(code: &str) -> String {
    format!("```\n{code}\n```")
}

fn first_fenced(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    if body.starts_with("```") {
        return Some("");
    }
    Some(match body.find("\n```") {
        Some(end) => &body[..end],
        None => body,
    })
}

fn substantive(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match &s.kind {
        StmtKind::Pass => false,
        StmtKind::Expr(e) => !matches!(e.kind, ExprKind::Name(_) | ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Bool(_) | ExprKind::None),
        _ => true,
    })
}

/// The first fenced block; otherwise the longest line suffix that parses as a
/// plan program.
pub fn extract_code(response: &str) -> Result<String, ExtractError> {
    if let Some(code) = first_fenced(response) {
        return Ok(code.to_string());
    }
    let lines: Vec<&str> = response.lines().collect();
    for start in 0..lines.len() {
        let candidate = lines[start..].join("\n");
        if let Ok(p) = parse_program(&candidate) {
            if substantive(&p.ast) {
                return Ok(candidate);
            }
        }
    }
    Err(ExtractError)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_fence() {
        let text = "Sure, here you go:\n```python\nput_first_on_second(\"a\", \"b\")\n```\nand another\n```\npass\n```";
        assert_eq!(extract_code(text).unwrap(), "put_first_on_second(\"a\", \"b\")");
    }

    #[test]
    fn bare_code_is_whole_text() {
        let code = "x = 1\nput_first_on_second(\"a\", \"b\")";
        assert_eq!(extract_code(code).unwrap(), code);
    }

    #[test]
    fn longest_parseable_suffix() {
        let text = "I will stack them now.\nblocks = get_obj_names()\nprint(blocks)";
        assert_eq!(extract_code(text).unwrap(), "blocks = get_obj_names()\nprint(blocks)");
    }

    #[test]
    fn prose_is_rejected() {
        assert_eq!(extract_code("I cannot do that.\nSorry about it."), Err(ExtractError));
        assert_eq!(extract_code("Done"), Err(ExtractError));
        assert_eq!(extract_code(""), Err(ExtractError));
    }

    #[test]
    fn fence_round_trip_edges() {
        for code in ["", "a = 1", "a = 1\n", "\n\nb = 2", "x = \"`\""] {
            assert_eq!(extract_code(&fence(code)).unwrap(), code);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::default();
        cfg.validate().unwrap();
        cfg.kind = BackendKind::Live;
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://127.0.0.1:9/v1/chat/completions".into());
        cfg.model_name = Some("m".into());
        cfg.validate().unwrap();
        cfg.timeout_secs = 0.0;
        assert!(cfg.validate().is_err());
    }
}
