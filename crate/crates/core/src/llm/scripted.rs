use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, CallKey, CompletionRecord, PromptBundle};

/// Number of hex digits of the prompt digest used for script lookup.
pub const DIGEST_PREFIX_LEN: usize = 12;

/// One line of a JSONL script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub task: String,
    #[serde(rename = "loop")]
    pub loop_index: usize,
    /// Prompt digest or a prefix of it; `"*"` matches any prompt.
    pub digest: String,
    #[serde(default)]
    pub role: Option<String>,
    pub response: String,
}

/// Answers calls the script has no entry for.
pub type Fallback = Box<dyn FnMut(&CallKey, &PromptBundle) -> Option<String> + Send>;

/// Replays canned completions keyed by (task, loop, role, digest prefix).
#[derive(Default)]
pub struct ScriptedBackend {
    records: HashMap<(String, usize, String, String), String>,
    fallback: Option<Fallback>,
}

fn prefix(d: &str) -> String {
    d.chars().take(DIGEST_PREFIX_LEN).collect()
}

impl ScriptedBackend {
    pub fn from_records(records: Vec<ScriptRecord>) -> Result<Self, BackendError> {
        let mut map = HashMap::new();
        for r in records {
            if r.digest != "*" && (r.digest.len() < DIGEST_PREFIX_LEN || !r.digest.chars().all(|c| c.is_ascii_hexdigit())) {
                return Err(BackendError::Script(format!(
                    "digest `{}` for {} loop {} must be `*` or at least {DIGEST_PREFIX_LEN} hex digits",
                    r.digest, r.task, r.loop_index
                )));
            }
            let role = r.role.unwrap_or_else(|| "planner".to_string());
            let digest = if r.digest == "*" { r.digest } else { prefix(&r.digest.to_ascii_lowercase()) };
            let key = (r.task.clone(), r.loop_index, role.clone(), digest);
            if map.insert(key, r.response).is_some() {
                return Err(BackendError::Script(format!("duplicate entry for {} loop {} role {role}", r.task, r.loop_index)));
            }
        }
        Ok(ScriptedBackend { records: map, fallback: None })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut recs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ScriptRecord =
                serde_json::from_str(line).map_err(|e| BackendError::Script(format!("line {}: {e}", i + 1)))?;
            recs.push(r);
        }
        Self::from_records(recs)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text)
    }

    pub fn with_fallback(mut self, f: Fallback) -> Self {
        self.fallback = Some(f);
        self
    }

    pub fn set_fallback(&mut self, f: Fallback) {
        self.fallback = Some(f);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&mut self, key: &CallKey, prompt: &PromptBundle) -> Result<CompletionRecord, BackendError> {
        let digest = prompt.digest();
        let base = (key.task.clone(), key.loop_index, key.role.clone());
        let hit = self
            .records
            .get(&(base.0.clone(), base.1, base.2.clone(), prefix(&digest)))
            .or_else(|| self.records.get(&(base.0, base.1, base.2, "*".to_string())))
            .cloned();
        let response = match hit {
            Some(r) => r,
            None => match self.fallback.as_mut().and_then(|f| f(key, prompt)) {
                Some(r) => r,
                None => {
                    return Err(BackendError::ScriptMissing(format!(
                        "task {} loop {} role {} digest {}",
                        key.task,
                        key.loop_index,
                        key.role,
                        prefix(&digest)
                    )))
                }
            },
        };
        Ok(CompletionRecord { prompt_digest: digest, response_text: response, latency_secs: 0.0, backend: BackendKind::Scripted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(task: &str, l: usize) -> CallKey {
        CallKey { task: task.into(), loop_index: l, role: "planner".into() }
    }

    #[test]
    fn replays_by_digest_prefix() {
        let p = PromptBundle::simple("sys", "user");
        let d = p.digest();
        let line = serde_json::to_string(&ScriptRecord {
            task: "A".into(),
            loop_index: 0,
            digest: d[..DIGEST_PREFIX_LEN].into(),
            role: None,
            response: "pass".into(),
        })
        .unwrap();
        let mut b = ScriptedBackend::parse_jsonl(&format!("{line}\n\n")).unwrap();
        let rec = b.complete(&key("A", 0), &p).unwrap();
        assert_eq!(rec.response_text, "pass");
        assert_eq!(rec.prompt_digest, d);
        assert_eq!(rec.latency_secs, 0.0);
        let miss = b.complete(&key("A", 1), &p).unwrap_err();
        assert!(matches!(&miss, BackendError::ScriptMissing(m) if m.contains("loop 1") && m.contains(&d[..12])));
        let other = PromptBundle::simple("sys", "other");
        assert!(b.complete(&key("A", 0), &other).is_err());
    }

    #[test]
    fn wildcard_and_fallback() {
        let text = r#"{"task":"B","loop":2,"digest":"*","response":"x = 1"}"#;
        let mut b = ScriptedBackend::parse_jsonl(text)
            .unwrap()
            .with_fallback(Box::new(|k: &CallKey, _p: &PromptBundle| (k.task == "C").then(|| "y = 2".to_string())));
        let p = PromptBundle::simple("a", "b");
        assert_eq!(b.complete(&key("B", 2), &p).unwrap().response_text, "x = 1");
        assert_eq!(b.complete(&key("C", 0), &p).unwrap().response_text, "y = 2");
        assert!(b.complete(&key("D", 0), &p).is_err());
    }

    #[test]
    fn malformed_scripts_rejected() {
        assert!(ScriptedBackend::parse_jsonl("{not json").is_err());
        assert!(ScriptedBackend::parse_jsonl(r#"{"task":"A","loop":0,"digest":"abc","response":""}"#).is_err());
        let dup = r#"{"task":"A","loop":0,"digest":"*","response":""}"#;
        assert!(ScriptedBackend::parse_jsonl(&format!("{dup}\n{dup}")).is_err());
    }
}
